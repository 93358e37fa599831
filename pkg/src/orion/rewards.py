"""Turn-level rewards, group-relative advantages, and trainer-ready exports.

The reward for one candidate query combines two equally weighted signals,
each normalized to [0, 1]:

* similarity: the best retrieved document's cosine similarity, mapped
  identically for non-negative values and as (sim+1)/2 for negative ones;
* rank: 1 - rank/|C| for a 0-based corpus rank, and 0 when the document is
  absent (NOT_FOUND).

Advantages are group-relative: reward minus the group mean, or z-scores under
the optional normalization mode (guarded to all-zero when the group standard
deviation vanishes). Candidate selection is argmax by default, with the
proportional-sampling variant behind a flag; both appear in the source
algorithms and the conflict is surfaced here rather than resolved.

Exports serialize traces with character-offset mask spans: think and query
contents plus their closing tags train; user_query and top_k_response spans
(tags included), opening tags, and separators are masked.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import NOT_FOUND
from .engine import EpisodeConfig, Retriever, execute_action
from .policy import Policy, PolicyError
from .trace import (
    TERMINAL_BUDGET,
    TERMINAL_POLICY_ERROR,
    TERMINAL_SUCCESS,
    SearchState,
    TraceDocument,
    append_turn,
    serialize_spans,
    serialize_trace,
)

ZSCORE_GUARD = 1e-8
DEFAULT_BETA = 0.1  # KL coefficient echoed for the external trainer
DEFAULT_GROUP_SIZE = 4


class RewardError(ValueError):
    """Out-of-range reward inputs."""


def normalize_similarity(sim: float) -> float:
    """Map a cosine similarity in [-1, 1] to [0, 1]."""
    if not -1.0 <= sim <= 1.0 or not math.isfinite(sim):
        raise RewardError(f"similarity {sim} outside [-1, 1]")
    return sim if sim >= 0.0 else (sim + 1.0) / 2.0


def normalize_rank(rank: int, corpus_size: int) -> float:
    """Map a 0-based corpus rank to [0, 1]; NOT_FOUND maps to 0."""
    if corpus_size < 1:
        raise RewardError(f"corpus size must be >= 1, got {corpus_size}")
    if rank == NOT_FOUND:
        return 0.0
    if not 0 <= rank < corpus_size:
        raise RewardError(f"rank {rank} outside [0, {corpus_size})")
    return 1.0 - rank / corpus_size


@dataclass(frozen=True)
class RewardBreakdown:
    raw_sim: float
    sim_norm: float
    rank: int
    rank_norm: float
    reward: float

    def to_dict(self) -> dict:
        return {
            "raw_sim": self.raw_sim,
            "sim_norm": self.sim_norm,
            "rank": self.rank,
            "rank_norm": self.rank_norm,
            "reward": self.reward,
        }


def turn_reward(sim: float, rank: int, corpus_size: int) -> RewardBreakdown:
    """Compose the turn reward: 0.5 * sim_norm + 0.5 * rank_norm, exactly."""
    sim_norm = normalize_similarity(sim)
    rank_norm = normalize_rank(rank, corpus_size)
    return RewardBreakdown(
        raw_sim=sim,
        sim_norm=sim_norm,
        rank=rank,
        rank_norm=rank_norm,
        reward=0.5 * sim_norm + 0.5 * rank_norm,
    )


def group_advantages(
    rewards: Sequence[float], mode: str = "mean_center"
) -> list[float]:
    """Group-relative advantages: mean-centered or z-scored.

    z_score divides by the sample standard deviation; when it falls under
    the guard the advantages are all zero.
    """
    if len(rewards) < 2:
        raise RewardError(f"group size must be >= 2, got {len(rewards)}")
    mean = sum(rewards) / len(rewards)
    centered = [r - mean for r in rewards]
    if mode == "mean_center":
        return centered
    if mode == "z_score":
        var = sum(c * c for c in centered) / (len(rewards) - 1)
        std = math.sqrt(var)
        if std < ZSCORE_GUARD:
            return [0.0] * len(rewards)
        return [c / std for c in centered]
    raise RewardError(f"unknown advantage mode {mode!r}")


def select_candidate(
    rewards: Sequence[float], mode: str = "argmax", rng: random.Random | None = None
) -> int:
    """Pick the candidate that advances the context.

    argmax breaks ties toward the lowest index; proportional samples index i
    with probability R_i / sum(R) (uniform when the sum is zero) and requires
    non-negative rewards plus an RNG.
    """
    if not rewards:
        raise RewardError("cannot select from an empty reward list")
    if mode == "argmax":
        return max(range(len(rewards)), key=lambda i: (rewards[i], -i))
    if mode == "proportional":
        if rng is None:
            raise RewardError("proportional selection needs an rng")
        if any(r < 0 for r in rewards):
            raise RewardError("proportional selection needs non-negative rewards")
        total = sum(rewards)
        if total == 0.0:
            return rng.randrange(len(rewards))
        u = rng.random() * total
        acc = 0.0
        for i, r in enumerate(rewards):
            acc += r
            if u < acc:
                return i
        return len(rewards) - 1
    raise RewardError(f"unknown selection mode {mode!r}")


# --- grouped collection ---------------------------------------------------------


@dataclass(frozen=True)
class CandidateOutcome:
    think: str
    query: str
    result_ids: tuple[str, ...]
    breakdown: RewardBreakdown

    def to_dict(self) -> dict:
        return {
            "think": self.think,
            "query": self.query,
            "result_ids": list(self.result_ids),
            **self.breakdown.to_dict(),
        }


@dataclass(frozen=True)
class GroupSample:
    """One turn's G candidates with their advantages and the advanced pick."""

    candidates: tuple[CandidateOutcome, ...]
    advantages: tuple[float, ...]
    selected: int

    def rewards(self) -> list[float]:
        return [c.breakdown.reward for c in self.candidates]

    def to_dict(self) -> dict:
        return {
            "candidates": [c.to_dict() for c in self.candidates],
            "advantages": list(self.advantages),
            "selected": self.selected,
        }


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = DEFAULT_GROUP_SIZE
    selection: str = "argmax"  # or "proportional"
    advantage_mode: str = "mean_center"  # or "z_score"
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise RewardError(f"group size must be >= 2, got {self.group_size}")


def candidate_signals(
    retriever: Retriever, query: str, target_ids: frozenset[str], k: int
) -> tuple[float, int]:
    """(similarity, rank) feeding the reward for one candidate query.

    Similarity is the best retrieved document's score. Rank is the ground-truth
    target's corpus rank when targets are known; otherwise the literal rank of
    the best-similarity document (0 under this exact retriever, by definition).
    """
    results = retriever.retrieve(query, k)
    sim = results.entries[0].score if results.entries else 0.0
    if target_ids:
        ranks = [retriever.rank_of(query, tid) for tid in sorted(target_ids)]
        found = [r for r in ranks if r != NOT_FOUND]
        rank = min(found) if found else NOT_FOUND
    else:
        rank = retriever.rank_of(query, results.entries[0].doc_id) if results.entries else NOT_FOUND
    return sim, rank


def collect_grouped_episode(
    policy: Policy,
    retriever: Retriever,
    q0: str,
    config: EpisodeConfig,
    grpo: GrpoConfig,
    rng: random.Random,
) -> tuple[TraceDocument, list[GroupSample]]:
    """Grouped sampling: per turn, score G candidates and advance one.

    The selected candidate's turn extends the context; the episode stops when
    its retrieval succeeds or the budget runs out.
    """
    state = SearchState(original_query=q0)
    groups: list[GroupSample] = []
    corpus_size = len(retriever.index)
    reason = TERMINAL_BUDGET
    for _t in range(1, config.max_turns + 1):
        try:
            actions = policy.propose(state, grpo.group_size)
        except PolicyError:
            reason = TERMINAL_POLICY_ERROR
            break
        outcomes: list[CandidateOutcome] = []
        turns = []
        hit = []
        for action in actions:
            turn, results = execute_action(retriever, action, config)
            sim, rank = candidate_signals(retriever, action.query, config.target_ids, config.k)
            outcomes.append(
                CandidateOutcome(
                    think=action.think,
                    query=action.query,
                    result_ids=tuple(results.doc_ids()),
                    breakdown=turn_reward(sim, rank, corpus_size),
                )
            )
            turns.append(turn)
            hit.append(bool(config.target_ids) and any(
                d in config.target_ids for d in results.doc_ids()[: config.k]
            ))
        rewards = [o.breakdown.reward for o in outcomes]
        advantages = group_advantages(rewards, grpo.advantage_mode)
        selected = select_candidate(rewards, grpo.selection, rng)
        groups.append(
            GroupSample(
                candidates=tuple(outcomes),
                advantages=tuple(advantages),
                selected=selected,
            )
        )
        state = append_turn(state, turns[selected], config.max_turns)
        if hit[selected]:
            reason = TERMINAL_SUCCESS
            break
    return TraceDocument(state=state, terminal_reason=reason), groups


# --- masked training-record export ----------------------------------------------


def mask_spans(trace: TraceDocument) -> list[tuple[int, int, bool]]:
    """Character-offset (start, end, trainable) spans partitioning the text."""
    spans = []
    offset = 0
    for span in serialize_spans(trace):
        end = offset + len(span.text)
        spans.append((offset, end, span.trainable))
        offset = end
    return spans


@dataclass(frozen=True)
class TrainingRecord:
    text: str
    spans: tuple[tuple[int, int, bool], ...]
    groups: tuple[GroupSample, ...] = ()
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "spans": [list(s) for s in self.spans],
            "groups": [g.to_dict() for g in self.groups],
            "config": dict(self.config),
        }


def make_training_record(
    trace: TraceDocument,
    groups: Sequence[GroupSample] = (),
    grpo: GrpoConfig | None = None,
) -> TrainingRecord:
    grpo = grpo or GrpoConfig()
    return TrainingRecord(
        text=serialize_trace(trace),
        spans=tuple(mask_spans(trace)),
        groups=tuple(groups),
        config={
            "group_size": grpo.group_size,
            "beta": grpo.beta,
            "z_score": grpo.advantage_mode == "z_score",
            "selection": grpo.selection,
        },
    )


def export_training_records(
    episodes: Sequence[TraceDocument | tuple[TraceDocument, Sequence[GroupSample]]],
    grpo: GrpoConfig | None = None,
):
    """Yield trainer-ready records for traces (with optional group data)."""
    for item in episodes:
        if isinstance(item, TraceDocument):
            yield make_training_record(item, (), grpo)
        else:
            trace, groups = item
            yield make_training_record(trace, groups, grpo)

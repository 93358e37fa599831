"""Archetype-driven trajectory generation and balanced SFT dataset assembly.

Trajectories from the ten scripted behaviors stand in for external-model
traces when no remote backend is configured; either way the pool schema is
the same: original query, source tag, and up to five per-turn tuples of
(think, query, results, similarity-to-target, target rank).

Dataset sampling apportions the requested total over sources by the
largest-remainder rule (seeded tie-break among equal remainders) and emits
masked training records.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .archetypes import PolicyResources
from .corpus import NOT_FOUND
from .engine import EpisodeConfig, EpisodeResult, Retriever, run_episode
from .policy import ArchetypeConfig, ScriptedPolicy, derive_rng
from .rewards import GrpoConfig, TrainingRecord, make_training_record
from .trace import RetrievedDoc, SearchState, TraceDocument, Turn

MAX_POOL_TURNS = 5


class PoolError(ValueError):
    """Malformed pool records or unsatisfiable sampling quotas."""


@dataclass(frozen=True)
class PoolTurn:
    think: str
    query: str
    result_ids: tuple[str, ...]
    result_texts: tuple[str, ...]
    cos: float | None
    rank: int | None

    def __post_init__(self) -> None:
        if self.cos is not None and not -1.0 <= self.cos <= 1.0:
            raise PoolError(f"cosine {self.cos} outside [-1, 1]")
        if self.rank is not None and self.rank < NOT_FOUND:
            raise PoolError(f"invalid rank {self.rank}")


@dataclass(frozen=True)
class PoolRecord:
    """One multi-turn trace from one source (model name or archetype kind)."""

    q0: str
    source: str
    turns: tuple[PoolTurn, ...]
    terminal_reason: str | None = None

    def __post_init__(self) -> None:
        if len(self.turns) > MAX_POOL_TURNS:
            raise PoolError(f"pool records hold at most {MAX_POOL_TURNS} turns")

    def dedup_key(self) -> tuple[str, str, str]:
        first_query = self.turns[0].query if self.turns else ""
        return (self.q0, self.source, first_query)

    def to_dict(self) -> dict:
        return {
            "q0": self.q0,
            "source": self.source,
            "terminal_reason": self.terminal_reason,
            "turns": [
                {
                    "think": t.think,
                    "query": t.query,
                    "result_ids": list(t.result_ids),
                    "result_texts": list(t.result_texts),
                    "cos": t.cos,
                    "rank": t.rank,
                }
                for t in self.turns
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PoolRecord":
        return cls(
            q0=obj["q0"],
            source=obj["source"],
            terminal_reason=obj.get("terminal_reason"),
            turns=tuple(
                PoolTurn(
                    think=t["think"],
                    query=t["query"],
                    result_ids=tuple(t["result_ids"]),
                    result_texts=tuple(t["result_texts"]),
                    cos=t.get("cos"),
                    rank=t.get("rank"),
                )
                for t in obj["turns"]
            ),
        )

    def to_trace(self) -> TraceDocument:
        turns = tuple(
            Turn(
                think=t.think,
                query=t.query,
                results=tuple(
                    RetrievedDoc(text=text, doc_id=doc_id)
                    for doc_id, text in zip(t.result_ids, t.result_texts)
                ),
                sim_to_target=t.cos,
                target_rank=t.rank,
            )
            for t in self.turns
        )
        return TraceDocument(
            state=SearchState(original_query=self.q0, history=turns),
            terminal_reason=self.terminal_reason,
        )


def record_from_episode(q0: str, source: str, result: EpisodeResult) -> PoolRecord:
    turns = tuple(
        PoolTurn(
            think=t.think,
            query=t.query,
            result_ids=tuple(d.doc_id or "" for d in t.results),
            result_texts=tuple(d.text for d in t.results),
            cos=t.sim_to_target,
            rank=t.target_rank,
        )
        for t in result.trace.state.history
    )
    return PoolRecord(
        q0=q0, source=source, turns=turns, terminal_reason=result.trace.terminal_reason
    )


def generate_trajectory(
    archetype: ArchetypeConfig,
    q0: str,
    retriever: Retriever,
    resources: PolicyResources,
    target_ids: Iterable[str],
    k: int = 5,
    max_turns: int = MAX_POOL_TURNS,
) -> PoolRecord:
    """Run one scripted episode and project it to a pool record."""
    config = EpisodeConfig(
        k=k, max_turns=min(max_turns, MAX_POOL_TURNS), target_ids=frozenset(target_ids)
    )
    policy = ScriptedPolicy(archetype, resources)
    result = run_episode(policy, retriever, q0, config)
    return record_from_episode(q0, archetype.kind, result)


@dataclass
class Pool:
    """Deduplicated trace pool, indexed by original query."""

    records: list[PoolRecord] = field(default_factory=list)

    def by_query(self) -> dict[str, list[PoolRecord]]:
        grouped: dict[str, list[PoolRecord]] = {}
        for rec in self.records:
            grouped.setdefault(rec.q0, []).append(rec)
        return grouped

    def by_source(self) -> dict[str, list[PoolRecord]]:
        grouped: dict[str, list[PoolRecord]] = {}
        for rec in self.records:
            grouped.setdefault(rec.source, []).append(rec)
        return grouped

    def __len__(self) -> int:
        return len(self.records)


def assemble_pool(records: Iterable[PoolRecord]) -> Pool:
    """Deduplicate by (q0, source, first turn query), keeping first seen."""
    seen: set[tuple[str, str, str]] = set()
    kept: list[PoolRecord] = []
    for rec in records:
        key = rec.dedup_key()
        if key in seen:
            continue
        seen.add(key)
        kept.append(rec)
    return Pool(records=kept)


@dataclass(frozen=True)
class DatasetManifest:
    """Requested dataset composition: per-source proportions and a total."""

    proportions: Mapping[str, float]
    total: int

    def __post_init__(self) -> None:
        if self.total < 1:
            raise PoolError(f"total must be >= 1, got {self.total}")
        if not self.proportions:
            raise PoolError("manifest needs at least one source")
        s = sum(self.proportions.values())
        if abs(s - 1.0) > 1e-9:
            raise PoolError(f"proportions must sum to 1, got {s}")
        if any(p < 0 for p in self.proportions.values()):
            raise PoolError("proportions must be non-negative")


def apportion(
    proportions: Mapping[str, float], total: int, rng: random.Random
) -> dict[str, int]:
    """Largest-remainder apportionment with a seeded tie-break.

    Sources get the floor of their exact quota; leftover units go to the
    largest fractional remainders, equal remainders ordered by the rng.
    """
    keys = sorted(proportions)
    exact = {k: proportions[k] * total for k in keys}
    counts = {k: int(exact[k]) for k in keys}
    leftover = total - sum(counts.values())
    jitter = {k: rng.random() for k in keys}
    order = sorted(keys, key=lambda k: (-(exact[k] - counts[k]), jitter[k]))
    for k in order[:leftover]:
        counts[k] += 1
    return counts


def sample_sft_dataset(
    pool: Pool,
    manifest: DatasetManifest,
    seed: int = 0,
    grpo: GrpoConfig | None = None,
) -> list[TrainingRecord]:
    """Draw a dataset matching the manifest and emit masked training records.

    Per-source sampling is without replacement over the pool records of that
    source (sorted for determinism, then shuffled by the seeded rng). Raises
    when any quota exceeds the available records.
    """
    rng = derive_rng(seed, "sft-sample")
    quotas = apportion(manifest.proportions, manifest.total, rng)
    by_source = pool.by_source()
    records: list[TrainingRecord] = []
    for source in sorted(quotas):
        want = quotas[source]
        have = sorted(by_source.get(source, []), key=lambda r: r.dedup_key())
        if want > len(have):
            raise PoolError(
                f"insufficient pool for source {source!r}: need {want}, have {len(have)}"
            )
        picked = rng.sample(have, want)
        for rec in picked:
            records.append(make_training_record(rec.to_trace(), (), grpo))
    return records

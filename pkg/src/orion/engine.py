"""Multi-turn episode execution: the greedy runner and beam search.

An episode repeats think/query/retrieve cycles until a target document lands
in the top-k or the turn budget runs out. Beam search expands every live beam
into M candidate continuations per turn, scores each candidate's state by the
policy's relevance confidence (1/perplexity), pools candidates across beams,
and keeps the top B; success is checked on the survivors after pruning.

Only the `<search_query>` content is embedded for retrieval; think spans never
reach the retriever.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import NOT_FOUND, CorpusIndex, RankedResults
from .policy import Action, Policy, PolicyError
from .trace import (
    DEFAULT_SNIPPET_CHARS,
    SearchState,
    TERMINAL_BUDGET,
    TERMINAL_POLICY_ERROR,
    TERMINAL_SUCCESS,
    TraceDocument,
    Turn,
    append_turn,
    snapshot_results,
    trace_from_dict,
    trace_to_dict,
)

log = logging.getLogger(__name__)


class Retriever:
    """An index paired with the query embedder; one retrieval surface."""

    def __init__(
        self,
        index: CorpusIndex,
        embed: Callable[[str], np.ndarray],
        snippet_chars: int = DEFAULT_SNIPPET_CHARS,
    ):
        self.index = index
        self.embed = embed
        self.snippet_chars = snippet_chars

    def retrieve(self, query: str, k: int) -> RankedResults:
        return self.index.search(self.embed(query), k)

    def rank_of(self, query: str, target_id: str) -> int:
        return self.index.rank_of(self.embed(query), target_id)

    def similarity_to(self, query: str, doc_id: str) -> float:
        return self.index.similarity_to(self.embed(query), doc_id)

    def best_similarity(self, query: str) -> float:
        """Best corpus similarity for a query (greedy_hill's probe signal)."""
        results = self.retrieve(query, 1)
        return results.entries[0].score if results.entries else 0.0

    def texts_for(self, results: RankedResults) -> dict[str, str]:
        return {e.doc_id: self.index.doc(e.doc_id).text for e in results.entries}


@dataclass(frozen=True)
class EpisodeConfig:
    k: int = 5
    max_turns: int = 5
    target_ids: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_turns < 1:
            raise ValueError(f"max_turns must be >= 1, got {self.max_turns}")


@dataclass(frozen=True)
class Beam:
    """One live search thread: its state and latest relevance confidence."""

    state: SearchState
    confidence: float  # 1/perplexity of the last assessment; 0.0 for the root
    alive: bool = True

    def last_query(self) -> str:
        last = self.state.last_turn()
        return last.query if last else self.state.original_query


@dataclass(frozen=True)
class EpisodeResult:
    trace: TraceDocument
    success_turn: int | None  # 1-based; set iff terminal_reason == success
    per_turn_ranks: tuple[int | None, ...]
    wall_clock: float
    beam_sizes: tuple[int, ...] = ()  # per-turn survivor counts (beam runs only)

    @property
    def succeeded(self) -> bool:
        return self.trace.terminal_reason == TERMINAL_SUCCESS


def check_success(results: RankedResults, target_ids: Iterable[str], k: int) -> bool:
    """True iff any target occupies a position < k in the results."""
    targets = set(target_ids)
    if not targets:
        return False
    return any(e.doc_id in targets for e in results.entries[:k])


def _target_metrics(
    retriever: Retriever, query: str, target_ids: frozenset[str]
) -> tuple[float | None, int | None]:
    """Best similarity-to-target and best target corpus rank for one query."""
    if not target_ids:
        return None, None
    sims, ranks = [], []
    for tid in sorted(target_ids):
        if tid in retriever.index:
            sims.append(retriever.similarity_to(query, tid))
        ranks.append(retriever.rank_of(query, tid))
    found = [r for r in ranks if r != NOT_FOUND]
    best_rank = min(found) if found else NOT_FOUND
    return (max(sims) if sims else None), best_rank


def execute_action(
    retriever: Retriever, action: Action, config: EpisodeConfig
) -> tuple[Turn, RankedResults]:
    """Retrieve for an action and freeze the completed turn."""
    results = retriever.retrieve(action.query, config.k)
    sim, rank = _target_metrics(retriever, action.query, config.target_ids)
    turn = Turn(
        think=action.think,
        query=action.query,
        results=snapshot_results(results, retriever.texts_for(results), retriever.snippet_chars),
        sim_to_target=sim,
        target_rank=rank,
    )
    return turn, results


def _result(
    state: SearchState,
    reason: str,
    success_turn: int | None,
    started: float,
    beam_sizes: Sequence[int] = (),
) -> EpisodeResult:
    return EpisodeResult(
        trace=TraceDocument(state=state, terminal_reason=reason),
        success_turn=success_turn,
        per_turn_ranks=tuple(t.target_rank for t in state.history),
        wall_clock=time.perf_counter() - started,
        beam_sizes=tuple(beam_sizes),
    )


def run_episode(
    policy: Policy, retriever: Retriever, q0: str, config: EpisodeConfig
) -> EpisodeResult:
    """Greedy multi-turn episode: one action per turn, stop on success."""
    started = time.perf_counter()
    state = SearchState(original_query=q0)
    for t in range(1, config.max_turns + 1):
        try:
            action = policy.propose(state, 1)[0]
        except PolicyError as exc:
            log.warning("policy error at turn %d: %s", t, exc)
            return _result(state, TERMINAL_POLICY_ERROR, None, started)
        turn, results = execute_action(retriever, action, config)
        state = append_turn(state, turn, config.max_turns)
        if check_success(results, config.target_ids, config.k):
            return _result(state, TERMINAL_SUCCESS, t, started)
    return _result(state, TERMINAL_BUDGET, None, started)


def _beam_succeeded(beam: Beam, config: EpisodeConfig) -> bool:
    last = beam.state.last_turn()
    if last is None:
        return False
    return any(
        d.doc_id in config.target_ids for d in last.results[: config.k] if d.doc_id is not None
    )


def beam_search(
    policy: Policy,
    retriever: Retriever,
    q0: str,
    beam_size: int,
    expansion: int,
    config: EpisodeConfig,
) -> EpisodeResult:
    """Best-first beam search over think/query continuations.

    Per turn, every live beam proposes `expansion` candidate actions; each
    candidate retrieves, extends the state, and is scored by
    1/relevance-perplexity. Candidates pool across beams, survivors are the
    top `beam_size` by confidence (ties broken by lexicographic query), and
    the search returns the best successful survivor immediately, else the
    highest-confidence beam at the budget.

    A policy error on a candidate removes only that candidate; if a whole
    turn yields no candidates the episode ends as policy_error.
    """
    if beam_size < 1 or expansion < 1:
        raise ValueError("beam_size and expansion must be >= 1")
    started = time.perf_counter()
    beams = [Beam(state=SearchState(original_query=q0), confidence=0.0)]
    sizes: list[int] = []
    for t in range(1, config.max_turns + 1):
        candidates: list[Beam] = []
        for beam in beams:
            try:
                actions = policy.propose(beam.state, expansion)
            except PolicyError as exc:
                log.warning("beam expansion failed at turn %d: %s", t, exc)
                continue
            for action in actions:
                try:
                    turn, _ = execute_action(retriever, action, config)
                    new_state = append_turn(beam.state, turn, config.max_turns)
                    ppl = policy.relevance_perplexity(new_state, t, action.query, q0)
                except PolicyError as exc:
                    log.warning("candidate dropped at turn %d: %s", t, exc)
                    continue
                candidates.append(Beam(state=new_state, confidence=1.0 / ppl))
        if not candidates:
            best = max(beams, key=lambda b: b.confidence)
            return _result(best.state, TERMINAL_POLICY_ERROR, None, started, sizes)
        candidates.sort(key=lambda b: (-b.confidence, b.last_query()))
        beams = candidates[:beam_size]
        sizes.append(len(beams))
        winners = [b for b in beams if _beam_succeeded(b, config)]
        if winners:
            return _result(winners[0].state, TERMINAL_SUCCESS, t, started, sizes)
    return _result(beams[0].state, TERMINAL_BUDGET, None, started, sizes)


# --- batch running and the episode log ----------------------------------------


def episode_to_dict(query_id: str, result: EpisodeResult) -> dict:
    # wall_clock is deliberately not serialized: logs must be byte-identical
    # across reruns of the same (config, seed, corpus)
    return {
        "query_id": query_id,
        "terminal_reason": result.trace.terminal_reason,
        "success_turn": result.success_turn,
        "per_turn_ranks": list(result.per_turn_ranks),
        "beam_sizes": list(result.beam_sizes),
        "trace": trace_to_dict(result.trace),
    }


def episode_from_dict(obj: dict) -> tuple[str, EpisodeResult]:
    trace = trace_from_dict(obj["trace"])
    result = EpisodeResult(
        trace=trace,
        success_turn=obj.get("success_turn"),
        per_turn_ranks=tuple(obj.get("per_turn_ranks", [])),
        wall_clock=0.0,
        beam_sizes=tuple(obj.get("beam_sizes", [])),
    )
    return obj["query_id"], result


def run_batch(
    queries: Sequence[tuple[str, str]],
    qrels: dict[str, dict[str, int]],
    policy_for: Callable[[str], Policy],
    retriever: Retriever,
    config: EpisodeConfig,
    *,
    beam_size: int | None = None,
    expansion: int = 1,
    workers: int = 1,
) -> list[tuple[str, EpisodeResult]]:
    """Run one episode per query, in input order.

    `policy_for(query_id)` builds the per-episode policy (scripted policies
    get their per-episode seed there). Targets are the qrels docs with
    relevance >= 1. Results keep the input order even under a worker pool.
    """

    def one(item: tuple[str, str]) -> tuple[str, EpisodeResult]:
        qid, text = item
        targets = frozenset(d for d, g in qrels.get(qid, {}).items() if g >= 1)
        cfg = EpisodeConfig(k=config.k, max_turns=config.max_turns, target_ids=targets)
        policy = policy_for(qid)
        if beam_size is None:
            return qid, run_episode(policy, retriever, text, cfg)
        return qid, beam_search(policy, retriever, text, beam_size, expansion, cfg)

    if workers <= 1:
        return [one(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, queries))

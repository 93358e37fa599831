from __future__ import annotations

import math

import pytest

from orion.corpus import NOT_FOUND, RankedResults, ScoredDoc
from orion.engine import (
    Beam,
    EpisodeConfig,
    beam_search,
    check_success,
    run_batch,
    run_episode,
)
from orion.policy import Action, ArchetypeConfig, PolicyError, ScriptedPolicy
from orion.trace import serialize_trace

from conftest import TREE_QUERY, axis, make_stub_retriever, mix


class ConstantPolicy:
    """Re-issues one query forever; pseudo-perplexity confidence."""

    def __init__(self, query: str):
        self.query = query

    def propose(self, state, n):
        return [Action(think="staying the course", query=self.query)] * n

    def relevance_perplexity(self, state, t, query, q0):
        best = state.history[t - 1].best_score() or 0.0
        return math.exp(1.0 - best)


class TablePolicy:
    """Actions scripted by (turn index, previous query)."""

    def __init__(self, table: dict[tuple[int, str], list[str]]):
        self.table = table

    def propose(self, state, n):
        prev = state.last_turn().query if state.history else ""
        queries = self.table[(len(state.history) + 1, prev)]
        if len(queries) < n:
            queries = queries + [queries[-1]] * (n - len(queries))
        return [Action(think=f"considering {q}", query=q) for q in queries[:n]]

    def relevance_perplexity(self, state, t, query, q0):
        best = state.history[t - 1].best_score() or 0.0
        return math.exp(1.0 - best)


class FailAtTurnPolicy(ConstantPolicy):
    def __init__(self, query: str, fail_turn: int):
        super().__init__(query)
        self.fail_turn = fail_turn

    def propose(self, state, n):
        if len(state.history) + 1 >= self.fail_turn:
            raise PolicyError("scripted failure")
        return super().propose(state, n)


def results_with_ranks(ids):
    return RankedResults(entries=tuple(ScoredDoc(d, 1.0 - i / 10) for i, d in enumerate(ids)), k=5)


class TestCheckSuccess:
    def test_rank_four_inside_k5(self):
        results = results_with_ranks(["a", "b", "c", "d", "target"])
        assert check_success(results, {"target"}, k=5)

    def test_rank_five_outside_k5(self):
        results = results_with_ranks(["a", "b", "c", "d", "e", "target"])
        assert not check_success(results, {"target"}, k=5)

    def test_empty_target_set(self):
        results = results_with_ranks(["a"])
        assert not check_success(results, set(), k=5)


# --- greedy episodes --------------------------------------------------------------


def immediate_hit_retriever():
    docs = {"hit": axis(4, 1), "miss1": axis(4, 2), "miss2": axis(4, 3)}
    queries = {"find it": axis(4, 1)}
    return make_stub_retriever(docs, queries)


class TestRunEpisode:
    def test_immediate_hit(self):
        retriever = immediate_hit_retriever()
        policy = ConstantPolicy("find it")
        cfg = EpisodeConfig(k=5, max_turns=5, target_ids=frozenset({"hit"}))
        result = run_episode(policy, retriever, "find it", cfg)
        assert result.trace.terminal_reason == "success"
        assert result.success_turn == 1
        assert result.per_turn_ranks == (0,)

    def test_constant_policy_exhausts_budget_at_rank_seven(self):
        # ten docs; the constant query likes the target eighth-most
        dim = 11
        docs = {f"d{i}": axis(dim, i + 1) for i in range(10)}
        weights = [0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5]
        queries = {"stuck": mix(dim, *((i + 1, w) for i, w in enumerate(weights)))}
        retriever = make_stub_retriever(docs, queries)
        cfg = EpisodeConfig(k=5, max_turns=5, target_ids=frozenset({"d7"}))
        result = run_episode(ConstantPolicy("stuck"), retriever, "stuck", cfg)
        assert result.trace.terminal_reason == "budget_exhausted"
        assert result.per_turn_ranks == (7, 7, 7, 7, 7)
        assert result.success_turn is None

    def test_depth_first_succeeds_at_turn_two_on_tree(self, tree_retriever, tree_resources):
        policy = ScriptedPolicy(ArchetypeConfig(kind="depth_first", seed=1), tree_resources)
        cfg = EpisodeConfig(k=5, max_turns=5, target_ids=frozenset({"t2"}))
        result = run_episode(policy, tree_retriever, TREE_QUERY, cfg)
        assert result.trace.terminal_reason == "success"
        assert result.success_turn == 2
        assert result.per_turn_ranks == (5, 0)

    def test_policy_error_keeps_partial_trace(self):
        retriever = immediate_hit_retriever()
        policy = FailAtTurnPolicy("find it", fail_turn=2)
        cfg = EpisodeConfig(k=1, max_turns=5, target_ids=frozenset({"miss1"}))
        result = run_episode(policy, retriever, "find it", cfg)
        assert result.trace.terminal_reason == "policy_error"
        assert len(result.trace.state.history) == 1

    def test_success_short_circuits(self, tree_retriever, tree_resources):
        policy = ScriptedPolicy(ArchetypeConfig(kind="depth_first", seed=1), tree_resources)
        cfg = EpisodeConfig(k=5, max_turns=5, target_ids=frozenset({"t2"}))
        result = run_episode(policy, tree_retriever, TREE_QUERY, cfg)
        assert len(result.trace.state.history) == result.success_turn


# --- beam search ------------------------------------------------------------------


def two_branch_fixture():
    """Hand-built corpus where only the low-confidence branch reaches the target.

    Queries embed as s * e_doc + sqrt(1-s^2) * e_aux so each has an exact
    cosine s with its intended document and 0 with everything else. The bright
    branch scores 0.9 then plateaus at 0.5; the dim branch starts at 0.3,
    rises to 0.6, and hits the target (cosine 0.9) at turn 3.
    """
    dim = 12
    docs = {
        "da1": axis(dim, 1), "da2": axis(dim, 2), "da3": axis(dim, 3),
        "da4": axis(dim, 4), "da5": axis(dim, 5),
        "pa1": axis(dim, 6), "pa2": axis(dim, 7),
        "ja1": axis(dim, 8), "ja2": axis(dim, 9),
        "zz-target": axis(dim, 10),
    }

    def q(doc_axis: int, s: float):
        return mix(dim, (doc_axis, s), (0, math.sqrt(1 - s * s)))

    queries = {
        "bright start": q(1, 0.9),
        "dim start": q(6, 0.3),
        "bright deeper": q(2, 0.5),
        "bright alt": q(3, 0.45),
        "dim deeper": q(7, 0.6),
        "dim noise": q(8, 0.2),
        "bright deepest": q(4, 0.5),
        "bright stuck": q(5, 0.45),
        "dim target": q(10, 0.9),
        "dim dud": q(9, 0.2),
        "bright loop4": q(2, 0.5),
        "bright fade4": q(3, 0.45),
        "bright loop5": q(4, 0.5),
        "bright fade5": q(5, 0.45),
    }
    table = {
        (1, ""): ["bright start", "dim start"],
        (2, "bright start"): ["bright deeper", "bright alt"],
        (2, "dim start"): ["dim deeper", "dim noise"],
        (3, "bright deeper"): ["bright deepest", "bright stuck"],
        (3, "dim deeper"): ["dim target", "dim dud"],
        (3, "dim noise"): ["dim dud", "dim dud"],
        (4, "bright deepest"): ["bright loop4", "bright fade4"],
        (5, "bright loop4"): ["bright loop5", "bright fade5"],
    }
    retriever = make_stub_retriever(docs, queries)
    cfg = EpisodeConfig(k=5, max_turns=5, target_ids=frozenset({"zz-target"}))
    return retriever, TablePolicy(table), cfg


class TestBeamSearch:
    def test_wide_beam_keeps_the_low_similarity_branch_alive(self):
        retriever, policy, cfg = two_branch_fixture()
        result = beam_search(policy, retriever, "root question", 2, 2, cfg)
        assert result.trace.terminal_reason == "success"
        assert result.success_turn == 3
        assert [t.query for t in result.trace.state.history] == [
            "dim start", "dim deeper", "dim target",
        ]

    def test_narrow_beam_follows_the_bright_decoy_and_fails(self):
        retriever, policy, cfg = two_branch_fixture()
        result = beam_search(policy, retriever, "root question", 1, 2, cfg)
        assert result.trace.terminal_reason == "budget_exhausted"
        assert result.success_turn is None
        assert result.trace.state.history[0].query == "bright start"

    def test_beam_count_bounded_by_b(self):
        retriever, policy, cfg = two_branch_fixture()
        result = beam_search(policy, retriever, "root question", 2, 2, cfg)
        assert result.beam_sizes and all(size <= 2 for size in result.beam_sizes)

    def test_survivors_are_top_b_by_pseudo_perplexity(self):
        # four candidates with similarities .9/.2/.6/.5: survivors .9 and .6
        dim = 6
        docs = {f"d{i}": axis(dim, i + 1) for i in range(4)}
        queries = {
            "q-hi": mix(dim, (1, 0.9), (0, math.sqrt(1 - 0.81))),
            "q-lo": mix(dim, (2, 0.2), (0, math.sqrt(1 - 0.04))),
            "q-mid": mix(dim, (3, 0.6), (0, 0.8)),
            "q-half": mix(dim, (4, 0.5), (0, math.sqrt(0.75))),
        }
        retriever = make_stub_retriever(docs, queries)
        policy = TablePolicy({(1, ""): ["q-hi", "q-lo", "q-mid", "q-half"]})
        cfg = EpisodeConfig(k=2, max_turns=1, target_ids=frozenset())
        result = beam_search(policy, retriever, "root", 2, 4, cfg)
        # the returned beam is the best survivor; sizes confirm pruning to B
        assert result.beam_sizes == (2,)
        assert result.trace.state.history[0].query == "q-hi"

    def test_degenerate_beam_equals_greedy_runner(self, tree_retriever, tree_resources):
        cfg = EpisodeConfig(k=5, max_turns=5, target_ids=frozenset({"t3b"}))
        policy = ScriptedPolicy(ArchetypeConfig(kind="depth_first", seed=9), tree_resources)
        greedy = run_episode(policy, tree_retriever, TREE_QUERY, cfg)
        beamed = beam_search(policy, tree_retriever, TREE_QUERY, 1, 1, cfg)
        assert beamed.trace == greedy.trace
        assert serialize_trace(beamed.trace) == serialize_trace(greedy.trace)

    def test_candidate_failure_removes_only_that_candidate(self):
        retriever, policy, cfg = two_branch_fixture()

        class FlakyConfidence(TablePolicy):
            def relevance_perplexity(self, state, t, query, q0):
                if query == "bright start":
                    raise PolicyError("cannot judge this one")
                return super().relevance_perplexity(state, t, query, q0)

        flaky = FlakyConfidence(policy.table)
        result = beam_search(flaky, retriever, "root question", 2, 2, cfg)
        # bright branch died at turn 1, dim branch still wins
        assert result.trace.terminal_reason == "success"
        assert result.trace.state.history[0].query == "dim start"

    def test_all_candidates_failing_ends_policy_error(self):
        retriever, _, cfg = two_branch_fixture()
        failing = FailAtTurnPolicy("bright start", fail_turn=1)
        result = beam_search(failing, retriever, "root question", 2, 2, cfg)
        assert result.trace.terminal_reason == "policy_error"
        assert result.trace.state.history == ()

    def test_tie_break_is_lexicographic_on_query(self):
        dim = 4
        docs = {"d1": axis(dim, 1), "d2": axis(dim, 2)}
        queries = {
            "zeta": mix(dim, (1, 0.5), (0, math.sqrt(0.75))),
            "alpha": mix(dim, (2, 0.5), (0, math.sqrt(0.75))),
        }
        retriever = make_stub_retriever(docs, queries)
        policy = TablePolicy({(1, ""): ["zeta", "alpha"]})
        cfg = EpisodeConfig(k=1, max_turns=1, target_ids=frozenset())
        result = beam_search(policy, retriever, "root", 1, 2, cfg)
        assert result.trace.state.history[0].query == "alpha"


class TestRunBatch:
    def test_order_preserved_and_targets_from_qrels(self, tree_retriever, tree_resources):
        queries = [("q1", TREE_QUERY), ("q2", TREE_QUERY)]
        qrels = {"q1": {"t2": 1, "o1": 0}, "q2": {"t3b": 2}}

        def policy_for(qid):
            return ScriptedPolicy(ArchetypeConfig(kind="depth_first", seed=5), tree_resources)

        results = run_batch(
            queries, qrels, policy_for, tree_retriever, EpisodeConfig(k=5, max_turns=5)
        )
        assert [qid for qid, _ in results] == ["q1", "q2"]
        assert results[0][1].trace.terminal_reason == "success"

    def test_parallel_matches_serial(self, tree_retriever, tree_resources):
        queries = [(f"q{i}", TREE_QUERY) for i in range(4)]
        qrels = {f"q{i}": {"t2": 1} for i in range(4)}

        def policy_for(qid):
            return ScriptedPolicy(ArchetypeConfig(kind="adaptive_context", seed=3), tree_resources)

        serial = run_batch(queries, qrels, policy_for, tree_retriever, EpisodeConfig())
        parallel = run_batch(
            queries, qrels, policy_for, tree_retriever, EpisodeConfig(), workers=3
        )
        assert [(q, r.trace) for q, r in serial] == [(q, r.trace) for q, r in parallel]


def test_beam_dataclass_tracks_last_query():
    from orion.trace import SearchState

    beam = Beam(state=SearchState(original_query="q0"), confidence=0.0)
    assert beam.last_query() == "q0"


def test_not_found_rank_recorded_for_absent_target():
    docs = {"d1": axis(3, 1), "d2": axis(3, 2)}
    queries = {"find": axis(3, 1)}
    retriever = make_stub_retriever(docs, queries)
    cfg = EpisodeConfig(k=1, max_turns=1, target_ids=frozenset({"ghost"}))
    result = run_episode(ConstantPolicy("find"), retriever, "find", cfg)
    assert result.per_turn_ranks == (NOT_FOUND,)

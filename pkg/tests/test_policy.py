from __future__ import annotations

import math
import random

import pytest

from orion.archetypes import FAILURE_MARKER, KINDS, PolicyResources
from orion.corpus import Document
from orion.policy import (
    Action,
    ArchetypeConfig,
    CapabilityError,
    PolicyError,
    RemotePolicy,
    ScriptedPolicy,
    archetype_step,
    clip_query,
    perplexity_from_logprobs,
    planning_phase_prompt,
    pseudo_perplexity,
    search_query_phase_prompt,
)
from orion.trace import RetrievedDoc, SearchState, Turn
from orion.vocab import TfidfTable

from conftest import TREE_QUERY


def state_with_sims(sims, q0="original question", queries=None, texts=None):
    """A state whose per-turn best similarities are exactly `sims`."""
    turns = []
    for i, s in enumerate(sims):
        text = (texts or {}).get(i, f"result text turn {i}")
        turns.append(
            Turn(
                think=f"step {i}",
                query=(queries or {}).get(i, f"issued query {i}"),
                results=(RetrievedDoc(text=text, doc_id=f"d{i}", score=s),),
            )
        )
    return SearchState(original_query=q0, history=tuple(turns))


class TestPerplexity:
    def test_uniform_half_probability(self):
        logp = [math.log(0.5)] * 7
        assert perplexity_from_logprobs(logp) == pytest.approx(2.0, abs=1e-12)

    def test_certain_tokens(self):
        assert perplexity_from_logprobs([0.0, 0.0, 0.0]) == pytest.approx(1.0)

    def test_pseudo_perplexity_formula(self):
        # declared surrogate: exp(1 - s); at s=0.8 that is exp(0.2)
        assert pseudo_perplexity(0.8) == pytest.approx(math.exp(0.2), abs=1e-12)

    def test_pseudo_perplexity_clamps(self):
        assert pseudo_perplexity(2.0) == pytest.approx(1.0)
        assert pseudo_perplexity(-5.0) == pytest.approx(math.exp(2.0))

    def test_monotone_in_similarity(self):
        sims = [-1.0, -0.3, 0.0, 0.4, 0.9, 1.0]
        ppls = [pseudo_perplexity(s) for s in sims]
        assert ppls == sorted(ppls, reverse=True)

    def test_scripted_relevance_uses_turn_results(self, tree_resources):
        policy = ScriptedPolicy(ArchetypeConfig(kind="adaptive_context"), tree_resources)
        state = state_with_sims([0.8, 0.2])
        assert policy.relevance_perplexity(state, 1, "q", "q0") == pytest.approx(math.exp(0.2))
        assert policy.relevance_perplexity(state, 2, "q", "q0") == pytest.approx(math.exp(0.8))
        with pytest.raises(ValueError, match="turn 3"):
            policy.relevance_perplexity(state, 3, "q", "q0")


class TestArchetypeConfig:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown archetype"):
            ArchetypeConfig(kind="clever_search")

    def test_unknown_param(self):
        with pytest.raises(ValueError, match="unknown params"):
            ArchetypeConfig(kind="adaptive_context", params={"beam": 1})

    def test_defaults_merged(self):
        cfg = ArchetypeConfig(kind="greedy_hill", params={"candidates": 5})
        assert cfg.params["candidates"] == 5


class TestPropose:
    def test_depth_first_turn_one_hand_simulated(self, tree_resources):
        # documented rule: head phrase of q0 plus its first corpus expansion;
        # head("machine learning for beginners") = "machine learning",
        # first expansion in the tree corpus = "neural"
        policy = ScriptedPolicy(ArchetypeConfig(kind="depth_first", seed=3), tree_resources)
        actions = policy.propose(SearchState(original_query=TREE_QUERY), 1)
        assert actions[0].query == "machine learning neural"

    @pytest.mark.parametrize("kind", KINDS)
    def test_determinism_across_calls(self, kind, tree_resources):
        policy = ScriptedPolicy(ArchetypeConfig(kind=kind, seed=11), tree_resources)
        state = SearchState(original_query=TREE_QUERY)
        first = policy.propose(state, 3)
        second = policy.propose(state, 3)
        assert first == second

    def test_query_length_bound(self, tree_resources):
        policy = ScriptedPolicy(
            ArchetypeConfig(kind="adaptive_context", seed=1), tree_resources, max_query_chars=18
        )
        state = state_with_sims([0.4], queries={0: "machine learning"}, texts={0: "machine learning neural transformers"})
        for action in policy.propose(state, 2):
            assert len(action.query) <= 18

    def test_clip_query_prefers_word_boundary(self):
        assert clip_query("alpha beta gamma", 12) == "alpha beta"
        assert clip_query("short", 10) == "short"

    def test_action_requires_query(self):
        with pytest.raises(ValueError, match="non-empty"):
            Action(think="t", query="   ")


class TestArchetypeSteps:
    def test_adaptive_context_adopts_dominant_term(self):
        docs = [
            Document("d1", "climate change carbon emissions"),
            Document("d2", "climate policy debate"),
            Document("d3", "ocean temperature rise"),
        ]
        res = PolicyResources(vocab=TfidfTable.from_documents(docs))
        state = state_with_sims(
            [0.4],
            q0="climate change",
            queries={0: "climate change"},
            texts={0: "carbon carbon emissions carbon climate"},
        )
        cfg = ArchetypeConfig(kind="adaptive_context")
        action = archetype_step(cfg, state, res, random.Random(0))
        assert "carbon" in action.query
        assert action.query.startswith("climate change")

    def test_greedy_hill_picks_argmax_edit(self):
        docs = [
            Document("d1", "base query alpha"),
            Document("d2", "base query beta"),
            Document("d3", "base query gamma"),
        ]
        res = PolicyResources(
            vocab=TfidfTable.from_documents(docs),
            probe={
                "base query alpha": 0.2,
                "base query beta": 0.5,
                "base query gamma": 0.4,
            }.__getitem__,
        )
        cfg = ArchetypeConfig(kind="greedy_hill")
        action = archetype_step(cfg, SearchState(original_query="base query"), res, random.Random(0))
        assert action.query == "base query beta"

    def test_wrong_direction_diagnoses_similarity_drop(self, tree_resources):
        state = state_with_sims([0.8, 0.3], queries={0: "good query", 1: "bad tangent"})
        cfg = ArchetypeConfig(kind="wrong_direction")
        action = archetype_step(cfg, state, tree_resources, random.Random(0))
        assert FAILURE_MARKER in action.think
        assert "bad tangent" in action.think

    def test_early_success_turn_one_mentions_success(self, tree_resources):
        cfg = ArchetypeConfig(kind="early_success")
        action = archetype_step(
            cfg, SearchState(original_query="anything"), tree_resources, random.Random(0)
        )
        assert "success" in action.think.lower()
        assert action.query == "anything"

    def test_depth_first_backtracks_on_drop(self, tree_resources):
        # the drop removes the last specialization and takes a sibling branch
        state = state_with_sims(
            [0.9, 0.2],
            q0=TREE_QUERY,
            queries={0: "machine learning neural", 1: "machine learning neural alpha"},
        )
        cfg = ArchetypeConfig(kind="depth_first")
        action = archetype_step(cfg, state, tree_resources, random.Random(0))
        assert action.query.startswith("machine learning neural ")
        assert not action.query.endswith("alpha")
        assert "backing up" in action.think

    def test_variants_shift_choices(self, tree_resources):
        cfg = ArchetypeConfig(kind="depth_first")
        state = SearchState(original_query=TREE_QUERY)
        a0 = archetype_step(cfg, state, tree_resources, random.Random(0), variant=0)
        a1 = archetype_step(cfg, state, tree_resources, random.Random(0), variant=1)
        assert a0.query != a1.query

    def test_greedy_hill_requires_probe(self, tree_vocab):
        res = PolicyResources(vocab=tree_vocab, probe=None)
        with pytest.raises(ValueError, match="probe"):
            ScriptedPolicy(ArchetypeConfig(kind="greedy_hill"), res)

    def test_degenerate_state_falls_back_to_q0(self, tree_vocab):
        # a query with no content tokens leaves random_walk nothing to swap
        res = PolicyResources(vocab=tree_vocab)
        state = state_with_sims([0.1], q0="zz qq", queries={0: "of the"})
        action = archetype_step(
            ArchetypeConfig(kind="random_walk"), state, res, random.Random(0)
        )
        assert action.query == "zz qq"
        assert "dead end" in action.think.lower()


class TestBaselinePrompts:
    def test_planning_prompt_shape(self):
        state = state_with_sims([0.5], queries={0: "first query"})
        prompt = planning_phase_prompt(state, k=5)
        assert prompt.startswith(
            'This is an information retrieval task. Your goal is to find documents '
            'that are relevant to this target query: "original question"'
        )
        assert "Turn 1 Analysis: step 0" in prompt
        assert "Turn 1 Search Query: first query" in prompt
        assert "Top-5 results:" in prompt
        assert prompt.endswith("based on the user query.")

    def test_query_prompt_mentions_current_analysis(self):
        state = state_with_sims([0.5])
        prompt = search_query_phase_prompt(state, "fresh analysis", k=5)
        assert "Turn 2 Analysis: fresh analysis" in prompt
        assert prompt.endswith("just plain text for semantic similarity search.")


class FakeTransport:
    """Scripted chat endpoint: pops canned responses per call."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.payloads = []

    def __call__(self, payload):
        self.payloads.append(payload)
        if not self.responses:
            raise AssertionError("no canned responses left")
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def chat_response(text, logprobs=None):
    choice = {"message": {"content": text}}
    if logprobs is not None:
        choice["logprobs"] = {"content": [{"logprob": lp} for lp in logprobs]}
    return {"choices": [choice]}


class TestRemotePolicy:
    def test_two_stage_elicitation(self):
        transport = FakeTransport(
            [chat_response("I should narrow this down.</think>"), chat_response("narrow query</search_query>")]
        )
        policy = RemotePolicy("http://e", "m", post=transport, api_key="k")
        actions = policy.propose(SearchState(original_query="broad topic"), 1)
        assert actions == [Action(think="I should narrow this down.", query="narrow query")]
        assert "<think>" in transport.payloads[0]["messages"][-1]["content"]
        assert transport.payloads[1]["messages"][-1]["content"].endswith("<search_query>")

    def test_malformed_output_retries_then_fails(self):
        transport = FakeTransport(
            [
                chat_response("thinking"), chat_response(""),  # first attempt: empty query
                chat_response("thinking"), chat_response("   "),  # retry: still empty
            ]
        )
        policy = RemotePolicy("http://e", "m", post=transport, api_key="k")
        with pytest.raises(PolicyError, match="no parseable query"):
            policy.propose(SearchState(original_query="q"), 1)

    def test_transport_failure_propagates_as_policy_error(self):
        transport = FakeTransport([PolicyError("remote transport failure: boom")])
        policy = RemotePolicy("http://e", "m", post=transport, api_key="k")
        with pytest.raises(PolicyError, match="transport"):
            policy.propose(SearchState(original_query="q"), 1)

    def test_relevance_perplexity_from_logprobs(self):
        lp = [math.log(0.5)] * 4
        transport = FakeTransport([chat_response("relevant.", logprobs=lp)])
        policy = RemotePolicy("http://e", "m", post=transport, api_key="k")
        state = state_with_sims([0.5], q0="q0")
        assert policy.relevance_perplexity(state, 1, "q1", "q0") == pytest.approx(2.0)
        payload = transport.payloads[0]
        assert payload["logprobs"] is True
        prompt = payload["messages"][-1]["content"]
        assert "Given turn 1 and search query q1" in prompt
        assert "relevant to the user query q0" in prompt

    def test_missing_logprobs_is_capability_error(self):
        transport = FakeTransport([chat_response("relevant.")])
        policy = RemotePolicy("http://e", "m", post=transport, api_key="k")
        state = state_with_sims([0.5])
        with pytest.raises(CapabilityError, match="log-probabilities"):
            policy.relevance_perplexity(state, 1, "q", "q0")

    def test_baseline_mode_uses_two_phase_prompts(self):
        transport = FakeTransport(
            [chat_response("Two sentences of analysis."), chat_response("plain text query")]
        )
        policy = RemotePolicy("http://e", "m", mode="baseline", post=transport, api_key="k")
        actions = policy.propose(SearchState(original_query="target info"), 1)
        assert actions[0].query == "plain text query"
        first = transport.payloads[0]["messages"][-1]["content"]
        assert first.startswith("This is an information retrieval task.")

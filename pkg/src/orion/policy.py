"""Policies that produce (think, query) actions and relevance confidences.

Two backends share one interface:

* `ScriptedPolicy` drives one of the ten behavioral archetypes. It is a pure
  function of (config, state): the per-call RNG is derived from the seed and
  the state's query chain, so repeated calls agree byte-for-byte.
* `RemotePolicy` talks to a chat-completions endpoint, eliciting the think
  span and the query in two stages (either via the structured-tag prompt or
  the two-phase plain-text baseline prompts). Relevance confidence comes from
  true perplexity over the model's relevance judgment, which requires the
  endpoint to return token log-probabilities.

Scripted backends have no language model, so their confidence surrogate is
the pseudo-perplexity exp(1 - best_similarity): better retrieval means lower
perplexity, preserving the ordering semantics of the real signal.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

from . import archetypes
from .archetypes import DEFAULT_PARAMS, KINDS, PolicyResources, StepAction
from .trace import SearchState, render_prompt, serialize_state

API_KEY_ENV = "ORION_API_KEY"
DEFAULT_MAX_QUERY_CHARS = 300

RELEVANCE_PROMPT = (
    "Given turn {t} and search query {query}, the retrieved documents are "
    "relevant to the user query {q0}."
)


class PolicyError(RuntimeError):
    """The policy could not produce a usable action."""


class CapabilityError(PolicyError):
    """The remote endpoint lacks a required capability (e.g. logprobs)."""


@dataclass(frozen=True)
class Action:
    """One proposed step: a reasoning span and the query to issue."""

    think: str
    query: str

    def __post_init__(self) -> None:
        if not self.query.strip():
            raise ValueError("action query must be non-empty")


def clip_query(query: str, max_chars: int = DEFAULT_MAX_QUERY_CHARS) -> str:
    """Bound a query's length, cutting at a word boundary when possible."""
    query = query.strip()
    if len(query) <= max_chars:
        return query
    cut = query[:max_chars]
    if " " in cut:
        cut = cut[: cut.rindex(" ")]
    return cut.strip() or query[:max_chars]


def derive_rng(*parts: object) -> random.Random:
    """Deterministic RNG keyed on arbitrary parts (stable across processes)."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def pseudo_perplexity(best_sim: float) -> float:
    """Scripted confidence surrogate: exp(1 - s), s clamped to [-1, 1]."""
    return math.exp(1.0 - max(-1.0, min(1.0, best_sim)))


def perplexity_from_logprobs(logprobs: Sequence[float]) -> float:
    """exp of the negative mean token log-probability."""
    if not logprobs:
        raise ValueError("perplexity needs at least one token log-probability")
    return math.exp(-sum(logprobs) / len(logprobs))


@dataclass(frozen=True)
class ArchetypeConfig:
    """Scripted-backend configuration: behavior kind, seed, per-kind knobs."""

    kind: str
    seed: int = 0
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown archetype {self.kind!r}; expected one of {KINDS}")
        defaults = DEFAULT_PARAMS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown params for {self.kind}: {sorted(unknown)}")
        merged = dict(defaults)
        merged.update(self.params)
        object.__setattr__(self, "params", merged)


class Policy(Protocol):
    def propose(self, state: SearchState, n: int) -> list[Action]: ...

    def relevance_perplexity(self, state: SearchState, t: int, query: str, q0: str) -> float: ...


def archetype_step(
    config: ArchetypeConfig,
    state: SearchState,
    resources: PolicyResources,
    rng: random.Random,
    variant: int = 0,
) -> StepAction:
    """Run one behavior step (see `archetypes` for the per-kind rules)."""
    return archetypes.STEPS[config.kind](config, state, resources, rng, variant)


class ScriptedPolicy:
    def __init__(
        self,
        config: ArchetypeConfig,
        resources: PolicyResources,
        max_query_chars: int = DEFAULT_MAX_QUERY_CHARS,
    ):
        if config.kind == "greedy_hill" and resources.probe is None:
            raise ValueError("greedy_hill needs PolicyResources.probe")
        self.config = config
        self.resources = resources
        self.max_query_chars = max_query_chars

    def _state_key(self, state: SearchState) -> str:
        return "\x1e".join([state.original_query] + [t.query for t in state.history])

    def propose(self, state: SearchState, n: int) -> list[Action]:
        if n < 1:
            raise ValueError("n must be >= 1")
        actions = []
        for i in range(n):
            rng = derive_rng(self.config.seed, self._state_key(state), len(state.history), i)
            step = archetype_step(self.config, state, self.resources, rng, variant=i)
            actions.append(
                Action(think=step.think, query=clip_query(step.query, self.max_query_chars))
            )
        return actions

    def relevance_perplexity(self, state: SearchState, t: int, query: str, q0: str) -> float:
        if not 1 <= t <= len(state.history):
            raise ValueError(f"turn {t} not present in state ({len(state.history)} turns)")
        best = state.history[t - 1].best_score()
        return pseudo_perplexity(best if best is not None else 0.0)


# --- two-phase baseline prompts ------------------------------------------------


def _baseline_header(q0: str) -> str:
    return (
        "This is an information retrieval task. Your goal is to find documents "
        f'that are relevant to this target query: "{q0}"\n\n'
    )


def _baseline_turns(state: SearchState, k: int) -> str:
    blocks = []
    for i, turn in enumerate(state.history, 1):
        results = "".join(f"{j}. {d.text}\n" for j, d in enumerate(turn.results, 1))
        blocks.append(
            f"Turn {i} Analysis: {turn.think}\n"
            f"Turn {i} Search Query: {turn.query}\n"
            f"Top-{k} results:\n{results}\n"
        )
    return "".join(blocks)


def planning_phase_prompt(state: SearchState, k: int = 5) -> str:
    """Baseline planning-phase prompt (two-sentence analysis elicitation)."""
    return (
        _baseline_header(state.original_query)
        + _baseline_turns(state, k)
        + "Analyze the search results from your previous query. Write exactly 2 "
        "sentences (under 40 words total) explaining what happened and how you "
        "plan on improving the search query to better retrieve the target "
        "document based on the user query."
    )


def search_query_phase_prompt(state: SearchState, analysis: str, k: int = 5) -> str:
    """Baseline search-query-phase prompt (plain-text query elicitation)."""
    n = len(state.history) + 1
    return (
        _baseline_header(state.original_query)
        + _baseline_turns(state, k)
        + f"Turn {n} Analysis: {analysis}\n"
        "Based on your analysis above, generate a new search query to find the "
        "target documents. Output ONLY the search query text. No explanations, "
        "no quotes, no formatting, no XML tags, no JSON - just plain text for "
        "semantic similarity search."
    )


# --- remote backend -------------------------------------------------------------


def _strip_tags(text: str, closing_tag: str) -> str:
    """Take content up to an echoed closing tag, dropping stray whitespace."""
    if closing_tag in text:
        text = text.split(closing_tag, 1)[0]
    return text.strip()


_TAG_LITERALS = tuple(
    f"<{t}>" for t in ("user_query", "think", "search_query", "top_k_response")
) + tuple(f"</{t}>" for t in ("user_query", "think", "search_query", "top_k_response"))


def _has_tag_literal(text: str) -> bool:
    return any(tag in text for tag in _TAG_LITERALS)


class RemotePolicy:
    """Chat-completions client for an external LLM policy.

    `mode="structured"` elicits think/query with the structured-tag prompt
    renders; `mode="baseline"` uses the two-phase plain-text prompts. One
    retry on malformed output, then PolicyError.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        mode: str = "structured",
        temperature: float = 0.7,
        max_tokens: int = 512,
        k: int = 5,
        system_prompt: str | None = None,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_query_chars: int = DEFAULT_MAX_QUERY_CHARS,
        post=None,
    ):
        if mode not in ("structured", "baseline"):
            raise ValueError(f"unknown remote mode {mode!r}")
        self.endpoint = endpoint
        self.model = model
        self.mode = mode
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.k = k
        self.system_prompt = system_prompt
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.max_query_chars = max_query_chars
        self._post = post or self._requests_post

    def _requests_post(self, payload: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except Exception as exc:
            raise PolicyError(f"remote transport failure: {exc}") from exc

    def _complete(self, prompt: str, want_logprobs: bool = False) -> tuple[str, list[float] | None]:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": prompt})
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if want_logprobs:
            payload["logprobs"] = True
        body = self._post(payload)
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise PolicyError(f"malformed completion response: {exc}") from exc
        logprobs = None
        if want_logprobs:
            content = (choice.get("logprobs") or {}).get("content")
            if not content:
                raise CapabilityError("endpoint returned no token log-probabilities")
            logprobs = [item["logprob"] for item in content]
        return text, logprobs

    def _elicit_once(self, state: SearchState) -> Action | None:
        if self.mode == "structured":
            think_raw, _ = self._complete(render_prompt(state, "think"))
            think = _strip_tags(think_raw, "</think>")
            if not think or _has_tag_literal(think):
                return None
            query_raw, _ = self._complete(render_prompt(state, "search_query", think=think))
            query = _strip_tags(query_raw, "</search_query>")
        else:
            think_raw, _ = self._complete(planning_phase_prompt(state, self.k))
            think = think_raw.strip()
            if not think or _has_tag_literal(think):
                return None
            query_raw, _ = self._complete(search_query_phase_prompt(state, think, self.k))
            query = query_raw.strip()
        query = " ".join(query.split())
        if not query or _has_tag_literal(query):
            return None
        return Action(think=think, query=clip_query(query, self.max_query_chars))

    def propose(self, state: SearchState, n: int) -> list[Action]:
        actions = []
        for _ in range(n):
            action = self._elicit_once(state)
            if action is None:  # one retry on malformed output
                action = self._elicit_once(state)
            if action is None:
                raise PolicyError("remote output had no parseable query after retry")
            actions.append(action)
        return actions

    def relevance_perplexity(self, state: SearchState, t: int, query: str, q0: str) -> float:
        if not 1 <= t <= len(state.history):
            raise ValueError(f"turn {t} not present in state ({len(state.history)} turns)")
        prompt = (
            serialize_state(state)
            + "\n\n"
            + RELEVANCE_PROMPT.format(t=t, query=query, q0=q0)
        )
        _, logprobs = self._complete(prompt, want_logprobs=True)
        assert logprobs is not None
        return perplexity_from_logprobs(logprobs)

"""The ten scripted search behaviors.

Each behavior is a pure function of (config, state, resources): every decision
is recomputed from the episode history, so repeated calls agree byte-for-byte
and beam-search forks stay consistent. The source material sketches each
behavior in a line; the exact rules implemented here are the ones documented
on each step function, and the tests hand-simulate those rules.

The `variant` argument shifts ranked choices (take the i-th best instead of
the best) so that a beam expansion of width M gets M distinct continuations.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

from .trace import SearchState
from .vocab import TfidfTable, head_phrase, tokenize

KINDS = (
    "adaptive_context",
    "random_walk",
    "breadth_first",
    "depth_first",
    "wrong_direction",
    "early_success",
    "exploitation_heavy",
    "greedy_hill",
    "best_first",
    "multi_beam",
)

# engine-chosen knobs; the source material never parameterizes the behaviors
DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "adaptive_context": {"adopt_terms": 2},
    "random_walk": {"neighbor_pool": 5},
    "breadth_first": {"fanout": 3},
    "depth_first": {},
    "wrong_direction": {"drift_rank": 4},
    "early_success": {"good_sim": 0.5},
    "exploitation_heavy": {},
    "greedy_hill": {"candidates": 3},
    "best_first": {"pool_size": 3, "try_threshold": 0.4},
    "multi_beam": {},
}

FAILURE_MARKER = "getting worse"


@dataclass(frozen=True)
class StepAction:
    think: str
    query: str


@dataclass(frozen=True)
class PolicyResources:
    """Corpus-derived context the behaviors draw on.

    `probe` maps a candidate query to its best retrieval similarity; only
    greedy_hill requires it.
    """

    vocab: TfidfTable
    probe: Callable[[str], float] | None = None


def _fallback(q0: str, reason: str) -> StepAction:
    return StepAction(
        think=f"Hit a dead end ({reason}); restarting from the original question.",
        query=q0,
    )


def _best_sims(state: SearchState) -> list[float]:
    return [t.best_score() or 0.0 for t in state.history]


def _used_terms(state: SearchState) -> set[str]:
    used: set[str] = set(tokenize(state.original_query))
    for t in state.history:
        used.update(tokenize(t.query))
    return used


def _last_results_text(state: SearchState) -> str:
    last = state.last_turn()
    if last is None:
        return ""
    return " ".join(d.text for d in last.results)


def _pick(items: list[str], variant: int) -> str | None:
    return items[variant % len(items)] if items else None


def step_adaptive_context(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Adopt the top tf*idf keywords of the last results into the query.

    Turn 1 issues the original query; later turns append the `adopt_terms`
    best new terms of the previous turn's result texts (variant shifts the
    window down the ranking).
    """
    if not state.history:
        return StepAction(
            think=f"Probe the corpus with the user's own wording for '{state.original_query}' "
            "and learn keywords from whatever comes back.",
            query=state.original_query,
        )
    j = int(cfg.params["adopt_terms"])
    prev = state.history[-1].query
    ranked = res.vocab.top_terms(_last_results_text(state), j + variant, exclude=tokenize(prev))
    terms = ranked[variant : variant + j] or ranked[-j:]
    if not terms:
        return _fallback(state.original_query, "no new keywords in the results")
    return StepAction(
        think=f"The retrieved passages emphasize {', '.join(repr(t) for t in terms)}; "
        "adding those keywords to steer closer.",
        query=f"{prev} {' '.join(terms)}",
    )


def step_random_walk(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Swap one random query token for a corpus-vocabulary neighbor.

    The query is rebuilt from its content tokens; the replaced position and
    the neighbor are drawn from the per-call seeded generator.
    """
    if not state.history:
        return StepAction(
            think="No firm plan; start from the given query and wander from there.",
            query=state.original_query,
        )
    tokens = tokenize(state.history[-1].query)
    if not tokens:
        return _fallback(state.original_query, "query has no content tokens")
    idx = rng.randrange(len(tokens))
    pool = int(cfg.params["neighbor_pool"])
    cands = res.vocab.neighbors(tokens[idx], pool, exclude=tokens)
    if not cands:
        return _fallback(state.original_query, f"no neighbors for '{tokens[idx]}'")
    new = rng.choice(cands)
    old, tokens[idx] = tokens[idx], new
    return StepAction(
        think=f"Wandering: swapping '{old}' for the related term '{new}' to see "
        "where that leads.",
        query=" ".join(tokens),
    )


def step_breadth_first(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Survey sibling subtopics of the original query before deepening.

    Siblings are the top `fanout` expansions of q0. Turn 1 issues q0, the
    following turns visit one sibling each, and once all are visited the
    best-scoring sibling turn is deepened with its own first expansion.
    """
    fanout = int(cfg.params["fanout"])
    q0 = state.original_query
    if not state.history:
        return StepAction(
            think="Map the territory first: issue the original query, then cover each "
            "sibling subtopic before drilling into any of them.",
            query=q0,
        )
    siblings = res.vocab.expansions(q0, fanout)
    if not siblings:
        return _fallback(q0, "no sibling subtopics found")
    t = len(state.history) + 1
    if t - 2 < len(siblings):
        sib = siblings[(t - 2 + variant) % len(siblings)]
        return StepAction(
            think=f"Still covering breadth: sibling subtopic '{sib}' comes next.",
            query=f"{q0} {sib}",
        )
    sims = _best_sims(state)
    best_i = max(range(1, len(sims)), key=lambda i: sims[i], default=0)
    base = state.history[best_i].query
    deeper = res.vocab.expansions(base, 1 + variant, exclude=_used_terms(state))
    term = _pick(deeper, variant)
    if term is None:
        return _fallback(q0, "no deeper term under the best branch")
    return StepAction(
        think=f"All branches visited; '{base}' scored best, so deepening it with '{term}'.",
        query=f"{base} {term}",
    )


def step_depth_first(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Drill one specialization deeper per turn; back up one level on a drop.

    Turn 1 issues the head phrase of q0 plus its first corpus expansion. While
    the best similarity does not fall, the next expansion of the current query
    is appended; when it falls, the last specialization is removed and the
    parent gets its next untried expansion instead.
    """
    q0 = state.original_query
    if not state.history:
        head = head_phrase(q0) or tokenize(q0)
        if not head:
            return _fallback(q0, "query has no content tokens")
        base = " ".join(head)
        exp = _pick(res.vocab.expansions(base, 1 + variant), variant)
        if exp is None:
            return _fallback(q0, "no expansion for the head phrase")
        return StepAction(
            think=f"Commit to one line of attack: start from '{base}' and keep "
            f"specializing, first with '{exp}'.",
            query=f"{base} {exp}",
        )
    sims = _best_sims(state)
    prev = state.history[-1].query
    used = _used_terms(state)
    dropped = len(sims) >= 2 and sims[-1] < sims[-2]
    if not dropped:
        exp = _pick(res.vocab.expansions(prev, 1 + variant, exclude=used), variant)
        if exp is None:
            return _fallback(q0, "branch exhausted")
        return StepAction(
            think=f"Similarity held up; drilling further down with '{exp}'.",
            query=f"{prev} {exp}",
        )
    tokens = tokenize(prev)
    if len(tokens) < 2:
        return _fallback(q0, "nothing left to backtrack")
    parent = " ".join(tokens[:-1])
    exp = _pick(res.vocab.expansions(parent, 1 + variant, exclude=used), variant)
    if exp is None:
        return _fallback(q0, "no sibling branch after backtracking")
    return StepAction(
        think=f"That branch lost ground; backing up one level to '{parent}' and "
        f"taking the '{exp}' branch instead.",
        query=f"{parent} {exp}",
    )


def step_wrong_direction(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Drift onto tangents, then diagnose the failure when similarity falls.

    While scores are not falling the query chases a weak expansion (the
    `drift_rank`-th candidate); after a drop the think span names the failure
    and the query re-anchors to q0 plus the best turn's strongest keyword.
    """
    q0 = state.original_query
    if not state.history:
        return StepAction(
            think="Follow whatever looks interesting and stay alert for signs the "
            "search is going wrong.",
            query=q0,
        )
    sims = _best_sims(state)
    prev = state.history[-1].query
    if len(sims) >= 2 and sims[-1] < sims[-2]:
        best_i = max(range(len(sims)), key=lambda i: sims[i])
        anchor = res.vocab.top_terms(
            " ".join(d.text for d in state.history[best_i].results),
            1 + variant,
            exclude=tokenize(q0),
        )
        term = _pick(anchor, variant)
        return StepAction(
            think=f"These results are {FAILURE_MARKER}: '{prev}' drifted away from what "
            f"'{q0}' is actually asking, so the last reformulation was a wrong turn. "
            "Re-anchoring to the original question.",
            query=f"{q0} {term}" if term else q0,
        )
    drift_rank = int(cfg.params["drift_rank"])
    exps = res.vocab.expansions(prev, drift_rank + variant, exclude=_used_terms(state))
    if not exps:
        return _fallback(q0, "no tangent available")
    term = exps[-1]
    return StepAction(
        think=f"Curious about the side thread '{term}'; chasing it even though it may "
        "not serve the original question.",
        query=f"{prev} {term}",
    )


def step_early_success(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Recognize when results already work and refine only minimally.

    Turn 1 validates q0 as-is. Afterwards, if the best similarity is rising
    (or above `good_sim` on turn 2) the previous query gains one keyword from
    its top result; otherwise the best query so far is re-taken and lightly
    refined the same way.
    """
    q0 = state.original_query
    if not state.history:
        return StepAction(
            think="Try the original query first; if the results already look successful "
            "there is no reason to change course, only to refine lightly.",
            query=q0,
        )
    sims = _best_sims(state)
    good = float(cfg.params["good_sim"])
    rising = sims[-1] >= sims[-2] if len(sims) >= 2 else sims[-1] >= good
    best_i = len(sims) - 1 if rising else max(range(len(sims)), key=lambda i: sims[i])
    base_turn = state.history[best_i]
    top_text = base_turn.results[0].text if base_turn.results else ""
    term = _pick(
        res.vocab.top_terms(top_text, 1 + variant, exclude=_used_terms(state)), variant
    )
    if term is None:
        return _fallback(q0, "nothing left to refine with")
    if rising:
        think = (
            f"This direction is already successful; keeping '{base_turn.query}' and "
            f"refining it minimally with '{term}'."
        )
    else:
        think = (
            f"The detour underperformed; returning to the successful query "
            f"'{base_turn.query}' and nudging it with '{term}'."
        )
    return StepAction(think=think, query=f"{base_turn.query} {term}")


def step_exploitation_heavy(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Never explore: always re-optimize the best-scoring query so far.

    Each turn takes the highest-similarity query from the history and appends
    one fresh keyword from that turn's top result.
    """
    q0 = state.original_query
    if not state.history:
        return StepAction(
            think="Find one query that works and keep optimizing it rather than "
            "exploring alternatives.",
            query=q0,
        )
    sims = _best_sims(state)
    best_i = max(range(len(sims)), key=lambda i: sims[i])
    base_turn = state.history[best_i]
    top_text = base_turn.results[0].text if base_turn.results else ""
    used = _used_terms(state)
    term = _pick(res.vocab.top_terms(top_text, 1 + variant, exclude=used), variant)
    if term is None:
        term = _pick(res.vocab.expansions(base_turn.query, 1 + variant, exclude=used), variant)
    if term is None:
        return _fallback(q0, "best query cannot be refined further")
    return StepAction(
        think=f"'{base_turn.query}' remains the best performer; squeezing more out of "
        f"it with '{term}'.",
        query=f"{base_turn.query} {term}",
    )


def step_greedy_hill(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Probe `candidates` edits against the index and keep the argmax.

    Candidate edits append each top expansion of the current query; each is
    scored by its best retrieval similarity and the highest scorer wins (ties
    by candidate order; variant takes the next-ranked edit).
    """
    if res.probe is None:
        raise ValueError("greedy_hill requires retrieval-probe resources")
    q0 = state.original_query
    base = state.history[-1].query if state.history else q0
    exclude = _used_terms(state) if state.history else ()
    edits = res.vocab.expansions(base, int(cfg.params["candidates"]), exclude=exclude)
    if not edits:
        return _fallback(q0, "no candidate edits")
    scored = sorted(
        ((res.probe(f"{base} {e}"), i) for i, e in enumerate(edits)),
        key=lambda pair: (-pair[0], pair[1]),
    )
    sim, idx = scored[variant % len(scored)]
    chosen = edits[idx]
    return StepAction(
        think=f"Tested {len(edits)} candidate refinements of '{base}'; "
        f"'{chosen}' retrieved best (similarity {sim:.3f}), so climbing that way.",
        query=f"{base} {chosen}",
    )


def step_best_first(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Keep a pool of hypothesis queries and pursue the most promising.

    The pool is q0 plus its top `pool_size` expansions. When the last turn
    scored under `try_threshold` and unissued hypotheses remain, the next one
    is tried; otherwise the best-scoring issued query is refined with one
    keyword from its top result.
    """
    q0 = state.original_query
    pool = [q0] + [f"{q0} {e}" for e in res.vocab.expansions(q0, int(cfg.params["pool_size"]))]
    if not state.history:
        return StepAction(
            think=f"Holding {len(pool)} candidate directions; starting with the most "
            "direct one and ranking the rest as evidence arrives.",
            query=pool[variant % len(pool)],
        )
    issued = {t.query for t in state.history}
    unissued = [h for h in pool if h not in issued]
    sims = _best_sims(state)
    if sims[-1] < float(cfg.params["try_threshold"]) and unissued:
        nxt = unissued[variant % len(unissued)]
        return StepAction(
            think=f"The last hypothesis underperformed; promoting the next one in the "
            f"pool: '{nxt}'.",
            query=nxt,
        )
    best_i = max(range(len(sims)), key=lambda i: sims[i])
    base_turn = state.history[best_i]
    top_text = base_turn.results[0].text if base_turn.results else ""
    term = _pick(
        res.vocab.top_terms(top_text, 1 + variant, exclude=_used_terms(state)), variant
    )
    if term is None:
        return _fallback(q0, "leading hypothesis cannot be extended")
    return StepAction(
        think=f"Hypothesis '{base_turn.query}' leads the pool; pursuing it with '{term}'.",
        query=f"{base_turn.query} {term}",
    )


def step_multi_beam(
    cfg, state: SearchState, res: PolicyResources, rng: random.Random, variant: int
) -> StepAction:
    """Round-robin three fixed sub-strategies as parallel search lanes.

    Lane 0 reads keywords out of the last results (q0 plus the top result
    term), lane 1 specializes q0 with its first expansion, lane 2 runs the
    second expansion as an independent thread. Turn t advances lane (t-1) mod 3.
    """
    q0 = state.original_query
    t = len(state.history) + 1
    lane = (t - 1) % 3
    if lane == 0:
        if not state.history:
            return StepAction(
                think="Running parallel lanes over this topic; lane one starts from the "
                "original query.",
                query=q0,
            )
        term = _pick(
            res.vocab.top_terms(_last_results_text(state), 1 + variant, exclude=tokenize(q0)),
            variant,
        )
        if term is None:
            return _fallback(q0, "lane one found no fresh keyword")
        return StepAction(
            think=f"Advancing lane one: folding the observed keyword '{term}' back "
            "into the original query.",
            query=f"{q0} {term}",
        )
    exps = res.vocab.expansions(q0, 2 + variant)
    if len(exps) < lane:
        return _fallback(q0, "not enough branches for the parallel lanes")
    term = exps[(lane - 1 + variant) % len(exps)]
    return StepAction(
        think=f"Advancing lane {lane + 1}: an independent thread on '{q0} {term}'.",
        query=f"{q0} {term}",
    )


STEPS: dict[str, Callable[..., StepAction]] = {
    "adaptive_context": step_adaptive_context,
    "random_walk": step_random_walk,
    "breadth_first": step_breadth_first,
    "depth_first": step_depth_first,
    "wrong_direction": step_wrong_direction,
    "early_success": step_early_success,
    "exploitation_heavy": step_exploitation_heavy,
    "greedy_hill": step_greedy_hill,
    "best_first": step_best_first,
    "multi_beam": step_multi_beam,
}

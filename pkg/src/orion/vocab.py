"""Corpus-derived term statistics backing the scripted search behaviors.

Built once at index time; gives archetypes their expansion terms, subtopic
siblings, and neighbor substitutions. Scoring is tf * idf with descending
score and ascending-term tie-breaks, so every archetype decision is exactly
reproducible by hand.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Iterable

from .corpus import Document

_TOKEN_RE = re.compile(r"[a-z0-9]+")

STOPWORDS = frozenset(
    """a an the and or not of in on for to is are was were be been being with by
    at from as that this these those it its do does did how what which who whom
    why when where can could should would will shall may might must about into
    over under between against during before after above below up down out off
    than then so if but nor no yes all any both each few more most other some
    such only own same too very s t just don now""".split()
)


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens, stopwords and single characters dropped."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2 and t not in STOPWORDS]


def head_phrase(text: str) -> list[str]:
    """Leading run of content tokens (stops at the first stopword after one)."""
    tokens = _TOKEN_RE.findall(text.lower())
    head: list[str] = []
    for tok in tokens:
        if tok in STOPWORDS or len(tok) < 2:
            if head:
                break
            continue
        head.append(tok)
    return head


class TfidfTable:
    """Term statistics over one corpus: idf, per-doc tokens, co-occurrence."""

    def __init__(self, doc_tokens: list[list[str]]):
        self._doc_tokens = doc_tokens
        self._doc_sets = [set(toks) for toks in doc_tokens]
        self.n_docs = len(doc_tokens)
        df: Counter[str] = Counter()
        for toks in self._doc_sets:
            df.update(toks)
        self._df = df
        self._idf = {
            term: math.log(self.n_docs / (1 + count)) + 1.0 for term, count in df.items()
        }

    @classmethod
    def from_documents(cls, documents: Iterable[Document]) -> "TfidfTable":
        return cls([tokenize(f"{d.title} {d.text}") for d in documents])

    def idf(self, term: str) -> float:
        return self._idf.get(term, math.log(float(self.n_docs)) + 1.0)

    def _ranked(self, scores: Counter[str], j: int, exclude: set[str]) -> list[str]:
        ranked = sorted(
            ((term, s) for term, s in scores.items() if term not in exclude and s > 0),
            key=lambda kv: (-kv[1], kv[0]),
        )
        return [term for term, _ in ranked[:j]]

    def top_terms(self, text: str, j: int, exclude: Iterable[str] = ()) -> list[str]:
        """Top-j tf*idf terms of a text, highest score first, ties by term."""
        tf = Counter(tokenize(text))
        scores = Counter({term: count * self.idf(term) for term, count in tf.items()})
        return self._ranked(scores, j, set(exclude))

    def expansions(self, query_text: str, j: int, exclude: Iterable[str] = ()) -> list[str]:
        """Corpus terms that best extend a query.

        Scored by summed tf*idf over documents containing every query token
        (falling back to any-token matches when no document has them all).
        Query tokens themselves are never returned.
        """
        qtokens = set(tokenize(query_text))
        if not qtokens:
            return []
        rows = [i for i, s in enumerate(self._doc_sets) if qtokens <= s]
        if not rows:
            rows = [i for i, s in enumerate(self._doc_sets) if qtokens & s]
        scores: Counter[str] = Counter()
        for i in rows:
            for term, count in Counter(self._doc_tokens[i]).items():
                scores[term] += count * self.idf(term)
        return self._ranked(scores, j, qtokens | set(exclude))

    def neighbors(self, term: str, j: int, exclude: Iterable[str] = ()) -> list[str]:
        """Terms co-occurring with `term`, scored by summed tf*idf."""
        rows = [i for i, s in enumerate(self._doc_sets) if term in s]
        scores: Counter[str] = Counter()
        for i in rows:
            for other, count in Counter(self._doc_tokens[i]).items():
                scores[other] += count * self.idf(other)
        return self._ranked(scores, j, {term} | set(exclude))

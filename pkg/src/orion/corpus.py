"""Document corpus with a flat (exhaustive) cosine-similarity index.

The index is the reference retrieval backend: every search is an exact scan
over the full embedding matrix, scored by cosine similarity, with ties broken
by ascending document id. It is immutable after construction and safe for
concurrent readers.

Ranks are 0-based everywhere; absence of a document is the ``NOT_FOUND``
sentinel, not an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

NOT_FOUND = -1


class CorpusError(ValueError):
    """Raised for malformed corpora: duplicate ids, missing or bad embeddings."""


@dataclass(frozen=True)
class Document:
    """One corpus unit: unique id, body text, optional title."""

    doc_id: str
    text: str
    title: str = ""

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise CorpusError("document id must be non-empty")
        if not self.text:
            raise CorpusError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float


@dataclass(frozen=True)
class RankedResults:
    """Top-k retrieval output: entries sorted by score desc, id asc on ties."""

    entries: tuple[ScoredDoc, ...]
    k: int

    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def best_score(self) -> float | None:
        return self.entries[0].score if self.entries else None

    def __len__(self) -> int:
        return len(self.entries)


def as_embedding(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Validate and coerce a vector to a 1-D float64 array."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise CorpusError(f"embedding must be a non-empty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise CorpusError("embedding contains non-finite values")
    return vec


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Raises CorpusError on dimension mismatch or a zero-norm input.
    """
    va, vb = as_embedding(a), as_embedding(b)
    if va.shape != vb.shape:
        raise CorpusError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise CorpusError("cosine similarity undefined for zero-norm vector")
    return float(np.dot(va, vb) / (na * nb))


@dataclass(frozen=True, eq=False)
class CorpusIndex:
    """Immutable flat index over a document corpus.

    Internally documents are stored in ascending-id order so that a stable
    sort on descending similarity yields the deterministic id tie-break for
    free.
    """

    documents: tuple[Document, ...]
    dim: int
    _matrix: np.ndarray = field(repr=False)        # (n, dim) float64, id-ascending rows
    _unit: np.ndarray = field(repr=False)          # row-normalized copy of _matrix
    _row_of: dict[str, int] = field(repr=False)
    _ids: tuple[str, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.documents)

    def doc(self, doc_id: str) -> Document:
        return self.documents[self._row_of[doc_id]]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._row_of

    def embedding_of(self, doc_id: str) -> np.ndarray:
        return self._matrix[self._row_of[doc_id]].copy()

    def _scores(self, query_emb: Sequence[float] | np.ndarray) -> np.ndarray:
        q = as_embedding(query_emb)
        if q.shape[0] != self.dim:
            raise CorpusError(f"query dim {q.shape[0]} does not match index dim {self.dim}")
        qn = np.linalg.norm(q)
        if qn == 0.0:
            raise CorpusError("cosine similarity undefined for zero-norm query")
        return self._unit @ (q / qn)

    def search(self, query_emb: Sequence[float] | np.ndarray, k: int) -> RankedResults:
        """Exact top-k by cosine similarity; ties broken by ascending doc id."""
        if k < 1:
            raise CorpusError(f"k must be >= 1, got {k}")
        scores = self._scores(query_emb)
        # rows are id-ascending, so a stable sort gives the id tie-break
        order = np.argsort(-scores, kind="stable")[: min(k, len(self.documents))]
        entries = tuple(ScoredDoc(self._ids[i], float(scores[i])) for i in order)
        return RankedResults(entries=entries, k=k)

    def full_ranking(self, query_emb: Sequence[float] | np.ndarray) -> list[str]:
        """All doc ids sorted by similarity descending (id asc on ties)."""
        scores = self._scores(query_emb)
        order = np.argsort(-scores, kind="stable")
        return [self._ids[i] for i in order]

    def rank_of(self, query_emb: Sequence[float] | np.ndarray, target_id: str) -> int:
        """0-based position of target_id in the full similarity ordering.

        Returns NOT_FOUND when the id is absent from the corpus.
        """
        if target_id not in self._row_of:
            return NOT_FOUND
        scores = self._scores(query_emb)
        row = self._row_of[target_id]
        s = scores[row]
        better = int(np.count_nonzero(scores > s))
        # among exact ties, earlier (smaller) ids rank first
        tied_before = int(np.count_nonzero(scores[:row] == s))
        return better + tied_before

    def similarity_to(self, query_emb: Sequence[float] | np.ndarray, doc_id: str) -> float:
        """Cosine similarity between the query and one document's embedding."""
        scores = self._scores(query_emb)
        return float(scores[self._row_of[doc_id]])


def build_index(
    documents: Iterable[Document],
    embeddings: Mapping[str, Sequence[float] | np.ndarray],
) -> CorpusIndex:
    """Build an immutable flat index.

    Every document must have exactly one embedding and all embeddings must
    share one dimension; duplicate ids are rejected.
    """
    docs = sorted(documents, key=lambda d: d.doc_id)
    if not docs:
        raise CorpusError("corpus is empty")
    seen: set[str] = set()
    for d in docs:
        if d.doc_id in seen:
            raise CorpusError(f"duplicate id {d.doc_id!r}")
        seen.add(d.doc_id)

    vectors: list[np.ndarray] = []
    dim: int | None = None
    for d in docs:
        if d.doc_id not in embeddings:
            raise CorpusError(f"missing embedding for doc {d.doc_id!r}")
        vec = as_embedding(embeddings[d.doc_id])
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise CorpusError(
                f"dimension mismatch for doc {d.doc_id!r}: {vec.shape[0]} vs {dim}"
            )
        vectors.append(vec)
    assert dim is not None

    matrix = np.vstack(vectors)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = [docs[i].doc_id for i in np.nonzero(norms[:, 0] == 0.0)[0]]
        raise CorpusError(f"zero-norm embedding for docs {bad}")
    unit = matrix / norms

    return CorpusIndex(
        documents=tuple(docs),
        dim=dim,
        _matrix=matrix,
        _unit=unit,
        _row_of={d.doc_id: i for i, d in enumerate(docs)},
        _ids=tuple(d.doc_id for d in docs),
    )

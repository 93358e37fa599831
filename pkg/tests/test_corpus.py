from __future__ import annotations

import math
import random

import numpy as np
import pytest

from orion.corpus import (
    NOT_FOUND,
    CorpusError,
    Document,
    build_index,
    cosine_similarity,
)


def brute_force_ranking(doc_vectors: dict[str, list[float]], query: list[float]):
    """Independent oracle: pure-python cosine over every doc, full sort."""

    def cos(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(y * y for y in b))
        return dot / (na * nb)

    scored = [(doc_id, cos(vec, query)) for doc_id, vec in doc_vectors.items()]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def docs_for(vectors: dict[str, list[float]]):
    return [Document(doc_id, f"text {doc_id}") for doc_id in vectors]


class TestBuildIndex:
    def test_count_preserved(self):
        vectors = {"d1": [1, 0, 0, 0], "d2": [0, 1, 0, 0], "d3": [0, 0, 1, 0]}
        index = build_index(docs_for(vectors), vectors)
        assert len(index) == 3

    def test_missing_embedding(self):
        docs = docs_for({"d1": [1.0], "d2": [1.0]})
        with pytest.raises(CorpusError, match="missing embedding"):
            build_index(docs, {"d1": [1.0, 0.0]})

    def test_duplicate_id(self):
        docs = [Document("d1", "a"), Document("d1", "b")]
        with pytest.raises(CorpusError, match="duplicate id"):
            build_index(docs, {"d1": [1.0, 0.0]})

    def test_dimension_mismatch(self):
        vectors = {"d1": [1.0, 0.0], "d2": [1.0, 0.0, 0.0]}
        with pytest.raises(CorpusError, match="dimension mismatch"):
            build_index(docs_for(vectors), vectors)

    def test_non_finite_embedding_rejected(self):
        vectors = {"d1": [1.0, float("nan")]}
        with pytest.raises(CorpusError, match="non-finite"):
            build_index(docs_for(vectors), vectors)


class TestCosine:
    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_identical(self):
        assert cosine_similarity([1, 0], [1, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_hand_value(self):
        # dot/(|a||b|) = 1/sqrt(2) = 0.70710678...
        assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-9)

    def test_symmetry_and_scale_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a, b = rng.normal(size=6), rng.normal(size=6)
            assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)
            assert cosine_similarity(a, 3.7 * b) == pytest.approx(
                cosine_similarity(a, b), abs=1e-12
            )

    def test_zero_norm_rejected(self):
        with pytest.raises(CorpusError, match="zero-norm"):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_dim_mismatch(self):
        with pytest.raises(CorpusError, match="dimension mismatch"):
            cosine_similarity([1.0], [1.0, 0.0])


class TestSearch:
    def test_self_match_dominates(self):
        vectors = {"d1": [1.0, 0.2], "d2": [0.3, 1.0], "d3": [-1.0, 0.5]}
        index = build_index(docs_for(vectors), vectors)
        results = index.search([0.3, 1.0], k=1)
        assert results.doc_ids() == ["d2"]
        assert results.entries[0].score == pytest.approx(1.0, abs=1e-12)

    def test_k_larger_than_corpus(self):
        vectors = {"d1": [1.0, 0.0], "d2": [0.0, 1.0]}
        index = build_index(docs_for(vectors), vectors)
        assert len(index.search([1.0, 1.0], k=10)) == 2

    def test_matches_brute_force_on_random_corpus(self):
        rng = random.Random(13)
        vectors = {
            f"doc-{i:02d}": [rng.gauss(0, 1) for _ in range(8)] for i in range(20)
        }
        index = build_index(docs_for(vectors), vectors)
        query = [rng.gauss(0, 1) for _ in range(8)]
        expected = brute_force_ranking(vectors, query)[:5]
        got = index.search(query, k=5)
        assert got.doc_ids() == [d for d, _ in expected]
        for entry, (_, score) in zip(got.entries, expected):
            assert entry.score == pytest.approx(score, abs=1e-9)

    def test_reported_score_equals_cosine(self):
        rng = random.Random(5)
        vectors = {f"d{i}": [rng.uniform(-1, 1) for _ in range(4)] for i in range(10)}
        index = build_index(docs_for(vectors), vectors)
        query = [0.5, -0.25, 1.0, 0.1]
        for entry in index.search(query, k=10).entries:
            assert entry.score == pytest.approx(
                cosine_similarity(query, vectors[entry.doc_id]), abs=1e-9
            )

    def test_prefix_property(self):
        rng = random.Random(99)
        vectors = {f"d{i}": [rng.gauss(0, 1) for _ in range(5)] for i in range(15)}
        index = build_index(docs_for(vectors), vectors)
        query = [rng.gauss(0, 1) for _ in range(5)]
        big = index.search(query, k=12)
        for k in (1, 3, 7, 12):
            assert index.search(query, k=k).entries == big.entries[:k]

    def test_tie_break_ascending_id(self):
        vectors = {"zed": [1.0, 0.0], "abc": [1.0, 0.0], "mid": [0.0, 1.0]}
        index = build_index(docs_for(vectors), vectors)
        assert index.search([1.0, 0.0], k=3).doc_ids() == ["abc", "zed", "mid"]

    def test_rebuild_determinism(self):
        rng = random.Random(3)
        vectors = {f"d{i}": [rng.gauss(0, 1) for _ in range(6)] for i in range(12)}
        query = [rng.gauss(0, 1) for _ in range(6)]
        a = build_index(docs_for(vectors), vectors).search(query, 6)
        b = build_index(docs_for(vectors), vectors).search(query, 6)
        assert a == b


class TestRankOf:
    def test_best_match_is_rank_zero(self):
        vectors = {"d1": [1.0, 0.0], "d2": [0.0, 1.0]}
        index = build_index(docs_for(vectors), vectors)
        assert index.rank_of([0.1, 1.0], "d2") == 0

    def test_absent_target(self):
        vectors = {"d1": [1.0, 0.0]}
        index = build_index(docs_for(vectors), vectors)
        assert index.rank_of([1.0, 0.0], "ghost") == NOT_FOUND

    def test_agrees_with_brute_force(self):
        rng = random.Random(21)
        vectors = {f"d{i}": [rng.gauss(0, 1) for _ in range(4)] for i in range(10)}
        index = build_index(docs_for(vectors), vectors)
        query = [rng.gauss(0, 1) for _ in range(4)]
        oracle = [doc for doc, _ in brute_force_ranking(vectors, query)]
        for doc_id in vectors:
            assert index.rank_of(query, doc_id) == oracle.index(doc_id)

    def test_consistent_with_search(self):
        rng = random.Random(8)
        vectors = {f"d{i}": [rng.gauss(0, 1) for _ in range(4)] for i in range(12)}
        index = build_index(docs_for(vectors), vectors)
        query = [rng.gauss(0, 1) for _ in range(4)]
        ids = index.search(query, k=6).doc_ids()
        for pos, doc_id in enumerate(ids):
            assert index.rank_of(query, doc_id) == pos

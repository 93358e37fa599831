from __future__ import annotations

import numpy as np
import pytest

from orion.archetypes import PolicyResources
from orion.corpus import Document, build_index
from orion.embed import HashEmbedder
from orion.engine import Retriever
from orion.vocab import TfidfTable

# A three-level topic tree: five breadth fillers at depth one, one depth-two
# document, two depth-three documents, and two off-path documents. Expansion
# chains are unambiguous by construction: "neural" co-occurs with the head in
# eight docs, "transformers" in three, "attention" in two.
TREE_DOCS = [
    Document("f1", "machine learning neural alpha"),
    Document("f2", "machine learning neural bravo"),
    Document("f3", "machine learning neural carol"),
    Document("f4", "machine learning neural delta"),
    Document("f5", "machine learning neural echos"),
    Document("t2", "machine learning neural transformers guide"),
    Document("t3a", "machine learning neural transformers attention layers"),
    Document("t3b", "machine learning neural transformers attention heads extra"),
    Document("o1", "machine learning decision trees ensemble"),
    Document("o2", "machine learning clustering unsupervised methods"),
]

TREE_QUERY = "machine learning for beginners"


@pytest.fixture(scope="session")
def tree_retriever() -> Retriever:
    embedder = HashEmbedder(dim=2048)
    embeddings = {d.doc_id: embedder(d.text) for d in TREE_DOCS}
    index = build_index(TREE_DOCS, embeddings)
    return Retriever(index, embedder)


@pytest.fixture(scope="session")
def tree_vocab() -> TfidfTable:
    return TfidfTable.from_documents(TREE_DOCS)


@pytest.fixture(scope="session")
def tree_resources(tree_retriever, tree_vocab) -> PolicyResources:
    return PolicyResources(vocab=tree_vocab, probe=tree_retriever.best_similarity)


def make_stub_retriever(
    doc_vectors: dict[str, np.ndarray | list[float]],
    query_vectors: dict[str, np.ndarray | list[float]],
    texts: dict[str, str] | None = None,
) -> Retriever:
    """Retriever over hand-set vectors; queries embed by exact text lookup."""
    texts = texts or {}
    docs = [Document(doc_id, texts.get(doc_id, f"text of {doc_id}")) for doc_id in doc_vectors]
    index = build_index(docs, {k: np.asarray(v, dtype=float) for k, v in doc_vectors.items()})

    def embed(text: str) -> np.ndarray:
        return np.asarray(query_vectors[text], dtype=float)

    return Retriever(index, embed)


def axis(dim: int, i: int, scale: float = 1.0) -> np.ndarray:
    vec = np.zeros(dim)
    vec[i] = scale
    return vec


def mix(dim: int, *components: tuple[int, float]) -> np.ndarray:
    vec = np.zeros(dim)
    for i, w in components:
        vec[i] = w
    return vec

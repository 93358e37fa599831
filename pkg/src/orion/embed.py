"""Query/document embedders: a deterministic hashing embedder and a service client.

The engine never trains or hosts an embedding model. Corpus vectors normally
come from precomputed files; for live query embedding there are two backends:

* ``HashEmbedder`` — signed feature-hashing bag of words. Stateless and fully
  deterministic, which makes desk-scale experiments reproducible bit-for-bit.
* ``EmbeddingServiceClient`` — POSTs ``{"input": [...texts], "model": name}``
  to a configurable endpoint and expects ``{"data": [{"embedding": [...]}]}``.
  The API key is read from ``ORION_EMBED_API_KEY`` unless given explicitly.
"""

from __future__ import annotations

import hashlib
import os
import re
from typing import Callable, Sequence

import numpy as np

EMBED_KEY_ENV = "ORION_EMBED_API_KEY"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmbeddingServiceError(RuntimeError):
    """Transport failure or malformed response from the embedding service."""


class HashEmbedder:
    """Signed feature-hashing bag-of-words embedder.

    Each token is hashed (sha1, stable across processes) to a bucket and a
    sign; token counts accumulate and the vector is L2-normalized. Signed
    hashing keeps E[collision noise] near zero and produces vectors whose
    cosines can go negative, exercising both similarity branches downstream.
    """

    def __init__(self, dim: int = 384):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            digest = hashlib.sha1(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:8], "little") % self.dim
            sign = 1.0 if digest[8] % 2 == 0 else -1.0
            vec[bucket] += sign
        if not vec.any():
            # keep zero-information queries embeddable: a fixed fallback bucket
            vec[0] = 1.0
        return vec / np.linalg.norm(vec)

    def embed_map(self, texts: dict[str, str]) -> dict[str, np.ndarray]:
        """Embed a mapping of id -> text (e.g. a whole corpus)."""
        return {key: self(text) for key, text in texts.items()}


class EmbeddingServiceClient:
    """Client for the prevailing embeddings wire convention."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        post: Callable[..., dict] | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(EMBED_KEY_ENV)
        self.timeout = timeout
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
        except Exception as exc:  # transport, HTTP status, or JSON decode
            raise EmbeddingServiceError(f"embedding request failed: {exc}") from exc

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        payload = {"input": list(texts), "model": self.model}
        body = self._post(payload)
        try:
            data = body["data"]
            vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
        except (KeyError, TypeError) as exc:
            raise EmbeddingServiceError(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise EmbeddingServiceError(
                f"expected {len(texts)} embeddings, got {len(vectors)}"
            )
        return vectors

    def __call__(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

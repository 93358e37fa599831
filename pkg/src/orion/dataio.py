"""File formats: corpus/queries JSON Lines, qrels TSV, and embedding files.

Embedding files come in two flavors:

* binary ("ORNE"): little-endian header of magic ``ORNE``, u32 version=1,
  u32 dim, u64 count, followed by ``count`` records of
  (u32 id-length, UTF-8 id bytes, dim x f32 values);
* JSON Lines fallback: one object per line, ``{"id": ..., "vector": [...]}``.

Readers auto-detect the flavor from the magic bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .corpus import CorpusError, Document, as_embedding

MAGIC = b"ORNE"
VERSION = 1


def read_corpus(path: str | Path) -> list[Document]:
    """Read a JSON Lines corpus with `_id`, `title`, `text` fields."""
    docs: list[Document] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "_id" not in obj or "text" not in obj:
                raise CorpusError(f"{path}:{lineno}: corpus line needs `_id` and `text`")
            docs.append(
                Document(doc_id=str(obj["_id"]), text=obj["text"], title=obj.get("title") or "")
            )
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps({"_id": d.doc_id, "title": d.title, "text": d.text}) + "\n")


def read_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    """Read tab-separated qrels `query-id<TAB>doc-id<TAB>score`; header optional."""
    qrels: dict[str, dict[str, int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, did, score = parts
            try:
                grade = int(score)
            except ValueError:
                if lineno == 1:  # header row
                    continue
                raise CorpusError(f"{path}:{lineno}: non-integer score {score!r}")
            qrels.setdefault(qid, {})[did] = grade
    return qrels


def read_queries(path: str | Path) -> list[tuple[str, str]]:
    """Read a JSON Lines queries file of `{"_id": ..., "text": ...}` pairs."""
    out: list[tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "_id" not in obj or "text" not in obj:
                raise CorpusError(f"{path}:{lineno}: query line needs `_id` and `text`")
            out.append((str(obj["_id"]), obj["text"]))
    return out


def write_embeddings(embeddings: Mapping[str, np.ndarray], path: str | Path) -> None:
    """Write the binary embedding format (ids in sorted order for determinism)."""
    ids = sorted(embeddings)
    if not ids:
        raise CorpusError("no embeddings to write")
    dim = as_embedding(embeddings[ids[0]]).shape[0]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, dim, len(ids)))
        for doc_id in ids:
            vec = as_embedding(embeddings[doc_id])
            if vec.shape[0] != dim:
                raise CorpusError(f"dimension mismatch for {doc_id!r}: {vec.shape[0]} vs {dim}")
            raw = doc_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(vec.astype("<f4").tobytes())


def _read_embeddings_binary(path: Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CorpusError(f"{path}: bad magic {magic!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise CorpusError(f"{path}: truncated header")
        version, dim, count = struct.unpack("<IIQ", header)
        if version != VERSION:
            raise CorpusError(f"{path}: unsupported version {version}")
        out: dict[str, np.ndarray] = {}
        for i in range(count):
            (id_len,) = struct.unpack("<I", fh.read(4))
            doc_id = fh.read(id_len).decode("utf-8")
            raw = fh.read(4 * dim)
            if len(raw) != 4 * dim:
                raise CorpusError(f"{path}: truncated record {i} ({doc_id!r})")
            out[doc_id] = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        return out


def _read_embeddings_jsonl(path: Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "id" not in obj or "vector" not in obj:
                raise CorpusError(f"{path}:{lineno}: embedding line needs `id` and `vector`")
            out[str(obj["id"])] = as_embedding(obj["vector"])
    return out


def read_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Read either embedding flavor, auto-detected by the magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _read_embeddings_binary(path)
    return _read_embeddings_jsonl(path)


def write_jsonl(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)

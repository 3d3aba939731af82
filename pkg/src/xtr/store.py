"""Token embedding store: binary matrix IO, corpus manifests, and stats.

The on-disk embedding format is deliberately minimal so round-trips are
bit-exact:

    magic   4 bytes   b"XTRE"
    version u32 LE    1
    flag    u8        1 if rows are unit-normalized, else 0
    dim     u32 LE    embedding dimension
    rows    u64 LE    token count
    data    rows*dim  float32 LE, row-major

Corpus and query manifests are JSON lines, one object per document/query:
``{"doc_id": str, "token_count": int, "token_texts": [str]?}`` (queries use
``query_id``). Document order in the manifest defines token offsets into the
embedding matrix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ManifestError,
    MalformedHeaderError,
    NonFiniteRowError,
    NormalizationError,
    TruncatedPayloadError,
)

MAGIC = b"XTRE"
VERSION = 1
_HEADER = struct.Struct("<4sIBIQ")

NORM_TOLERANCE = 1e-4


@dataclass(frozen=True)
class TokenMatrix:
    """Row-major float32 matrix of token embeddings.

    ``normalized`` declares that every row has unit L2 norm (within 1e-4);
    it is validated, not enforced by rescaling.
    """

    data: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"matrix must be at least 1x1, got {arr.shape}")
        finite = np.isfinite(arr).all(axis=1)
        if not finite.all():
            raise NonFiniteRowError(int(np.flatnonzero(~finite)[0]))
        if self.normalized:
            norms = np.linalg.norm(arr.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > NORM_TOLERANCE
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise NormalizationError(row, float(norms[row]))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class DocumentRecord:
    """One document's slice of the corpus token matrix."""

    doc_id: str
    token_offset: int
    token_count: int
    token_texts: tuple[str, ...] | None = None


@dataclass(frozen=True)
class CorpusStats:
    """Corpus-level counts: documents, total tokens, mean tokens/doc."""

    num_docs: int
    total_tokens: int
    mean_doc_tokens: float


@dataclass(frozen=True)
class Query:
    query_id: str
    matrix: TokenMatrix
    token_texts: tuple[str, ...] | None = None


@dataclass(frozen=True)
class QuerySet:
    queries: tuple[Query, ...] = field(default_factory=tuple)

    def __iter__(self):
        return iter(self.queries)

    def __len__(self) -> int:
        return len(self.queries)


def write_embeddings(matrix: TokenMatrix, path: str | Path) -> None:
    """Persist a TokenMatrix; ``load_embeddings`` recovers it bit-exactly."""
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, 1 if matrix.normalized else 0,
                          matrix.dim, matrix.rows)
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    path.write_bytes(header + payload)


def load_embeddings(path: str | Path) -> TokenMatrix:
    """Read and validate an embedding file.

    Raises :class:`MalformedHeaderError`, :class:`TruncatedPayloadError`,
    :class:`NonFiniteRowError` or :class:`NormalizationError` depending on
    what is wrong; each message carries enough context to locate the fault.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(
            f"{path}: file too short for header ({len(raw)} bytes)")
    magic, version, flag, dim, rows = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if flag not in (0, 1):
        raise MalformedHeaderError(f"{path}: invalid normalized flag {flag}")
    if dim < 1 or rows < 1:
        raise MalformedHeaderError(f"{path}: invalid shape {rows}x{dim}")
    expected = rows * dim * 4
    payload = raw[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(payload)} bytes, "
            f"header declares {expected}")
    if len(payload) > expected:
        raise MalformedHeaderError(
            f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    return TokenMatrix(data=data.copy(), normalized=bool(flag))


def _read_manifest_lines(path: str | Path) -> list[dict]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}")
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}:{lineno}: expected an object")
            entries.append(obj)
    if not entries:
        raise ManifestError(f"{path}: empty manifest")
    return entries


def _texts_for(entry: dict, count: int, label: str) -> tuple[str, ...] | None:
    texts = entry.get("token_texts")
    if texts is None:
        return None
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        raise ManifestError(f"{label}: token_texts must be a list of strings")
    if len(texts) != count:
        raise ManifestError(
            f"{label}: token_texts has {len(texts)} entries, "
            f"token_count is {count}")
    return tuple(texts)


def build_corpus(manifest_path: str | Path,
                 embeddings: TokenMatrix) -> tuple[list[DocumentRecord], CorpusStats]:
    """Partition the embedding rows into documents per the manifest.

    Document order defines contiguous, disjoint token ranges that must cover
    the matrix exactly.
    """
    entries = _read_manifest_lines(manifest_path)
    records: list[DocumentRecord] = []
    seen: set[str] = set()
    offset = 0
    for entry in entries:
        doc_id = entry.get("doc_id")
        if not isinstance(doc_id, str) or not doc_id:
            raise ManifestError(f"missing or invalid doc_id in entry {entry!r}")
        if doc_id in seen:
            raise ManifestError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        count = entry.get("token_count")
        if not isinstance(count, int) or count < 1:
            raise ManifestError(f"doc {doc_id!r}: token_count must be >= 1")
        texts = _texts_for(entry, count, f"doc {doc_id!r}")
        records.append(DocumentRecord(doc_id, offset, count, texts))
        offset += count
    if offset != embeddings.rows:
        raise ManifestError(
            f"manifest token counts sum to {offset}, "
            f"embedding matrix has {embeddings.rows} rows")
    stats = CorpusStats(
        num_docs=len(records),
        total_tokens=offset,
        mean_doc_tokens=offset / len(records),
    )
    return records, stats


def load_queries(manifest_path: str | Path,
                 embeddings: TokenMatrix) -> QuerySet:
    """Split a query embedding matrix into per-query token matrices."""
    entries = _read_manifest_lines(manifest_path)
    queries: list[Query] = []
    seen: set[str] = set()
    offset = 0
    for entry in entries:
        query_id = entry.get("query_id")
        if not isinstance(query_id, str) or not query_id:
            raise ManifestError(f"missing or invalid query_id in entry {entry!r}")
        if query_id in seen:
            raise ManifestError(f"duplicate query_id {query_id!r}")
        seen.add(query_id)
        count = entry.get("token_count")
        if not isinstance(count, int) or count < 1:
            raise ManifestError(f"query {query_id!r}: token_count must be >= 1")
        texts = _texts_for(entry, count, f"query {query_id!r}")
        block = embeddings.data[offset:offset + count]
        if block.shape[0] != count:
            raise ManifestError(
                f"query {query_id!r}: token range exceeds embedding rows")
        queries.append(Query(query_id,
                             TokenMatrix(block, normalized=embeddings.normalized),
                             texts))
        offset += count
    if offset != embeddings.rows:
        raise ManifestError(
            f"query manifest token counts sum to {offset}, "
            f"embedding matrix has {embeddings.rows} rows")
    return QuerySet(tuple(queries))


def write_manifest(path: str | Path, entries: list[dict]) -> None:
    """Write manifest entries as JSON lines (inverse of the loaders)."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def corpus_token_texts(records: list[DocumentRecord]) -> list[str] | None:
    """Flatten per-document token texts into a global token-index list.

    Returns None when any document lacks texts (the lexical probe then
    cannot run).
    """
    texts: list[str] = []
    for record in records:
        if record.token_texts is None:
            return None
        texts.extend(record.token_texts)
    return texts

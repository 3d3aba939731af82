"""Exact top-k' token retrieval over the corpus token matrix.

The index owns the token -> (document, position) mapping and exposes the
retrieval stage used by both inference pipelines. Scores are inner products
accumulated in float64 and compared in float32; ties break toward the lower
global token index so results are reproducible everywhere.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionMismatchError, RetrievalError
from .store import CorpusStats, DocumentRecord, TokenMatrix


@dataclass(frozen=True)
class TokenHit:
    """One retrieved corpus token for one query token."""

    token_idx: int
    doc_id: str
    position: int
    score: float


class RetrievalResult:
    """Per query-token top-k' hits, each row sorted (score desc, token asc).

    Rows have exactly ``k_prime`` entries; the last entry of row i is the
    source of the missing-similarity bound for that query token.
    """

    def __init__(self, token_indices: np.ndarray, scores: np.ndarray,
                 doc_ordinals: np.ndarray, positions: np.ndarray,
                 doc_ids: list[str]):
        self.token_indices = token_indices
        self.scores = scores
        self.doc_ordinals = doc_ordinals
        self.positions = positions
        self._doc_ids = doc_ids
        self._ordinal_by_id: dict[str, int] | None = None

    @property
    def num_rows(self) -> int:
        return self.token_indices.shape[0]

    @property
    def k_prime(self) -> int:
        return self.token_indices.shape[1]

    def doc_id(self, ordinal: int) -> str:
        return self._doc_ids[ordinal]

    def ordinal_of(self, doc_id: str) -> int:
        if self._ordinal_by_id is None:
            self._ordinal_by_id = {d: i for i, d in enumerate(self._doc_ids)}
        return self._ordinal_by_id[doc_id]

    def hits(self, row: int) -> list[TokenHit]:
        return [
            TokenHit(int(self.token_indices[row, j]),
                     self._doc_ids[self.doc_ordinals[row, j]],
                     int(self.positions[row, j]),
                     float(self.scores[row, j]))
            for j in range(self.k_prime)
        ]

    def last_scores(self) -> np.ndarray:
        """The k'-th (lowest retained) score per query token row."""
        return self.scores[:, -1].copy()


@dataclass(frozen=True)
class CandidateSet:
    """Deduplicated documents touched by a retrieval, plus hit density."""

    doc_ordinals: np.ndarray
    doc_ids: list[str]
    mean_hits_per_doc: float

    @property
    def count(self) -> int:
        return len(self.doc_ids)


class TokenIndex:
    """Flat exact-search index over all corpus token vectors."""

    def __init__(self, matrix: TokenMatrix, records: list[DocumentRecord],
                 stats: CorpusStats):
        self.matrix = matrix
        self.records = records
        self.stats = stats
        self.doc_ids = [r.doc_id for r in records]
        doc_of = np.empty(matrix.rows, dtype=np.int64)
        pos_of = np.empty(matrix.rows, dtype=np.int64)
        for ordinal, rec in enumerate(records):
            end = rec.token_offset + rec.token_count
            doc_of[rec.token_offset:end] = ordinal
            pos_of[rec.token_offset:end] = np.arange(rec.token_count)
        self._doc_of_token = doc_of
        self._pos_of_token = pos_of

    @property
    def dim(self) -> int:
        return self.matrix.dim

    @property
    def num_tokens(self) -> int:
        return self.matrix.rows

    @property
    def normalized(self) -> bool:
        return self.matrix.normalized

    def doc_ordinal(self, doc_id: str) -> int:
        return self.doc_ids.index(doc_id)

    def gather_doc(self, ordinal: int) -> np.ndarray:
        """All token vectors of one document (the gathering stage)."""
        rec = self.records[ordinal]
        return self.matrix.data[rec.token_offset:rec.token_offset + rec.token_count]

    def _package(self, idx: np.ndarray, scores: np.ndarray) -> RetrievalResult:
        return RetrievalResult(
            token_indices=idx,
            scores=scores,
            doc_ordinals=self._doc_of_token[idx],
            positions=self._pos_of_token[idx],
            doc_ids=self.doc_ids,
        )

    def retrieve(self, queries: TokenMatrix | np.ndarray, k_prime: int,
                 workers: int = 1) -> RetrievalResult:
        """Top-k' exact inner-product search for every query token row.

        Results are independent per row, so the worker count never changes
        the output.
        """
        q = queries.data if isinstance(queries, TokenMatrix) else np.asarray(queries)
        q = np.ascontiguousarray(q, dtype=np.float32)
        if q.ndim != 2:
            raise DimensionMismatchError(f"queries must be 2-D, got {q.shape}")
        if q.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"query dim {q.shape[1]} != index dim {self.dim}")
        if not 1 <= k_prime <= self.num_tokens:
            raise RetrievalError(
                f"k' must be in [1, {self.num_tokens}], got {k_prime}")
        corpus = self.matrix.data
        if workers <= 1 or q.shape[0] == 1:
            idx, scores = kernels.topk_inner_products(corpus, q, k_prime)
        else:
            chunks = np.array_split(np.arange(q.shape[0]), workers)
            chunks = [c for c in chunks if c.size]
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                parts = list(pool.map(
                    lambda c: kernels.topk_inner_products(
                        corpus, np.ascontiguousarray(q[c]), k_prime),
                    chunks))
            idx = np.concatenate([p[0] for p in parts], axis=0)
            scores = np.concatenate([p[1] for p in parts], axis=0)
        return self._package(idx, scores)


def candidate_docs(result: RetrievalResult) -> CandidateSet:
    """Union of source documents over all retrieved tokens.

    ``mean_hits_per_doc`` is (total hits) / (candidate count): the average
    number of retrieved tokens backing each candidate.
    """
    if result.num_rows == 0:
        raise RetrievalError("empty retrieval result")
    ordinals = np.unique(result.doc_ordinals)
    total_hits = result.num_rows * result.k_prime
    return CandidateSet(
        doc_ordinals=ordinals,
        doc_ids=[result.doc_id(int(o)) for o in ordinals],
        mean_hits_per_doc=total_hits / ordinals.size,
    )


class PartitionedTokenIndex:
    """Coarse-partition accelerator over a :class:`TokenIndex`.

    Token vectors are clustered once; a query row probes only the partitions
    whose centroids score highest. Probing every partition reproduces exact
    search bit-for-bit.
    """

    def __init__(self, base: TokenIndex, centroids: np.ndarray,
                 assignments: np.ndarray):
        self.base = base
        self.centroids = np.ascontiguousarray(centroids, dtype=np.float32)
        self.assignments = np.asarray(assignments, dtype=np.int64)
        order = np.argsort(self.assignments, kind="stable")
        counts = np.bincount(self.assignments, minlength=self.centroids.shape[0])
        bounds = np.concatenate([[0], np.cumsum(counts)])
        self._members = [order[bounds[p]:bounds[p + 1]]
                         for p in range(self.centroids.shape[0])]

    @property
    def num_partitions(self) -> int:
        return self.centroids.shape[0]

    def retrieve(self, queries: TokenMatrix | np.ndarray, k_prime: int,
                 probes: int) -> RetrievalResult:
        q = queries.data if isinstance(queries, TokenMatrix) else np.asarray(queries)
        q = np.ascontiguousarray(q, dtype=np.float32)
        if q.shape[1] != self.base.dim:
            raise DimensionMismatchError(
                f"query dim {q.shape[1]} != index dim {self.base.dim}")
        if not 1 <= probes <= self.num_partitions:
            raise RetrievalError(
                f"probes must be in [1, {self.num_partitions}], got {probes}")
        corpus = self.base.matrix.data
        n = q.shape[0]
        idx = np.empty((n, k_prime), dtype=np.int64)
        scores = np.empty((n, k_prime), dtype=np.float32)
        cscores = (q.astype(np.float64) @
                   self.centroids.astype(np.float64).T).astype(np.float32)
        for row in range(n):
            order = np.lexsort((np.arange(self.num_partitions), -cscores[row]))
            probe_ids = order[:probes]
            subset = np.sort(np.concatenate([self._members[p] for p in probe_ids]))
            if subset.size < k_prime:
                raise RetrievalError(
                    f"probed partitions hold {subset.size} tokens, "
                    f"k'={k_prime} requested")
            sub_idx, sub_scores = kernels.topk_inner_products(
                np.ascontiguousarray(corpus[subset]), q[row:row + 1], k_prime)
            idx[row] = subset[sub_idx[0]]
            scores[row] = sub_scores[0]
        return self.base._package(idx, scores)


def build_partitions(index: TokenIndex, num_partitions: int,
                     seed: int = 0, iterations: int = 10) -> PartitionedTokenIndex:
    """Cluster corpus tokens with seeded k-means (inner-product assignment)."""
    if not 1 <= num_partitions <= index.num_tokens:
        raise RetrievalError(
            f"num_partitions must be in [1, {index.num_tokens}]")
    rng = np.random.default_rng(seed)
    vectors = index.matrix.data.astype(np.float64)
    start = rng.choice(index.num_tokens, size=num_partitions, replace=False)
    centroids = vectors[np.sort(start)].copy()
    for _ in range(iterations):
        assign = np.argmax(vectors @ centroids.T, axis=1)
        for p in range(num_partitions):
            members = vectors[assign == p]
            if members.size:
                centroids[p] = members.mean(axis=0)
    assign = np.argmax(vectors @ centroids.T, axis=1)
    # empty partitions are legal; retrieval just skips them
    return PartitionedTokenIndex(index, centroids.astype(np.float32), assign)


def save_partitions(partitioned: PartitionedTokenIndex, path: str | Path) -> None:
    payload = {
        "version": 1,
        "num_partitions": partitioned.num_partitions,
        "centroids": partitioned.centroids.tolist(),
        "assignments": partitioned.assignments.tolist(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_partitions(index: TokenIndex, path: str | Path) -> PartitionedTokenIndex:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != 1:
        raise RetrievalError(f"{path}: unsupported partition sidecar version")
    centroids = np.asarray(payload["centroids"], dtype=np.float32)
    assignments = np.asarray(payload["assignments"], dtype=np.int64)
    if assignments.shape[0] != index.num_tokens:
        raise RetrievalError(
            f"{path}: sidecar covers {assignments.shape[0]} tokens, "
            f"index holds {index.num_tokens}")
    return PartitionedTokenIndex(index, centroids, assignments)

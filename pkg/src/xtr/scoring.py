"""Scoring functions for late-interaction retrieval.

Three scorers share one affinity-matrix vocabulary:

* ``score_colbert`` -- mean over query tokens of the per-row maximum token
  similarity (the classic sum-of-max).
* ``score_xtr_train`` -- sum-of-max restricted by an alignment mask and
  normalized by the number of query tokens that retrieved anything.
* ``score_xtr_infer`` -- sum-of-max reconstructed purely from retrieval
  hits, with missing rows imputed; it never touches document embeddings.

Affinities are accumulated in float64. When both inputs are float32 (the
stored-corpus case) the result is rounded back to float32 so scores here are
bit-identical to the retrieval stage's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, RetrievalError
from .index import RetrievalResult
from .store import TokenMatrix


def _as_array(x: TokenMatrix | np.ndarray) -> np.ndarray:
    return x.data if isinstance(x, TokenMatrix) else np.asarray(x)


def affinity(queries: TokenMatrix | np.ndarray,
             doc: TokenMatrix | np.ndarray) -> np.ndarray:
    """All pairwise inner products, shape (n query tokens, m doc tokens)."""
    q = _as_array(queries)
    d = _as_array(doc)
    if q.ndim != 2 or d.ndim != 2:
        raise DimensionMismatchError("affinity expects 2-D matrices")
    if q.shape[1] != d.shape[1]:
        raise DimensionMismatchError(
            f"dim mismatch: queries {q.shape[1]}, doc {d.shape[1]}")
    out = q.astype(np.float64) @ d.astype(np.float64).T
    if q.dtype == np.float32 and d.dtype == np.float32:
        return out.astype(np.float32)
    return out


def score_colbert(queries: TokenMatrix | np.ndarray,
                  doc: TokenMatrix | np.ndarray) -> float:
    """Sum-of-max similarity, averaged over query tokens."""
    p = affinity(queries, doc)
    return float(np.mean(p.max(axis=1), dtype=np.float64))


# ---------------------------------------------------------------------------
# Alignment masks
# ---------------------------------------------------------------------------

def alignment_row_max(p: np.ndarray) -> np.ndarray:
    """Binary mask with a single 1 per row at the row maximum (ties: lowest j)."""
    a = np.zeros_like(p, dtype=np.int8)
    a[np.arange(p.shape[0]), np.argmax(p, axis=1)] = 1
    return a


def alignment_inbatch_topk(p_batch: list[np.ndarray],
                           k_train: int) -> list[np.ndarray]:
    """Per-document masks marking tokens inside the in-batch top-k_train.

    For each query token the candidate pool is every token of every batch
    document; ties at the boundary go to the lower global (concatenated)
    token index.
    """
    if k_train < 1:
        raise ValueError(f"k_train must be >= 1, got {k_train}")
    widths = [p.shape[1] for p in p_batch]
    pooled = np.concatenate(p_batch, axis=1)
    n, total = pooled.shape
    k = min(k_train, total)
    mask = np.zeros((n, total), dtype=np.int8)
    cols = np.arange(total)
    for i in range(n):
        order = np.lexsort((cols, -pooled[i]))
        mask[i, order[:k]] = 1
    out = []
    offset = 0
    for w in widths:
        out.append(mask[:, offset:offset + w])
        offset += w
    return out


def alignment_retrieved(result: RetrievalResult, doc_ordinal: int,
                        token_count: int) -> np.ndarray:
    """Mask of shape (n, token_count): 1 where this doc's token was retrieved."""
    a = np.zeros((result.num_rows, token_count), dtype=np.int8)
    rows, cols = np.nonzero(result.doc_ordinals == doc_ordinal)
    a[rows, result.positions[rows, cols]] = 1
    return a


# ---------------------------------------------------------------------------
# Alignment-masked training score
# ---------------------------------------------------------------------------

def masked_row_values(p: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row max over aligned entries and the per-row coverage flags.

    Rows with no aligned entry get value 0; their coverage flag is False.
    """
    if p.shape != a.shape:
        raise DimensionMismatchError(
            f"affinity {p.shape} vs alignment {a.shape}")
    masked = np.where(a.astype(bool), p.astype(np.float64), -np.inf)
    values = masked.max(axis=1)
    covered = np.isfinite(values)
    values = np.where(covered, values, 0.0)
    return values, covered


def xtr_score_from_affinity(p: np.ndarray, a: np.ndarray) -> float:
    """Training-side score: sum of aligned row maxima over max(Z, 1)."""
    values, covered = masked_row_values(p, a)
    z = int(covered.sum())
    return float(values.sum(dtype=np.float64) / max(z, 1))


def score_xtr_train(queries: TokenMatrix | np.ndarray,
                    doc: TokenMatrix | np.ndarray,
                    alignment: np.ndarray) -> float:
    """Alignment-masked sum-of-max with the retrieved-row normalizer Z.

    A document none of whose tokens were retrieved scores exactly 0.
    """
    return xtr_score_from_affinity(affinity(queries, doc), alignment)


# ---------------------------------------------------------------------------
# Inference-side scoring from retrieval hits only
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImputationRule:
    """How to fill a query token's score when a candidate has no hit for it.

    ``none``       missing rows contribute 0 (no estimate exists)
    ``constant``   missing rows contribute a fixed value
    ``topk_score`` missing rows contribute that row's k'-th retrieval score,
                   the upper bound on any similarity that was not retrieved
    """

    kind: str
    value: float = 0.0

    _KINDS = ("none", "constant", "topk_score")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown imputation kind {self.kind!r}")
        if self.kind == "constant" and not np.isfinite(self.value):
            raise ValueError("constant imputation value must be finite")

    @classmethod
    def none(cls) -> "ImputationRule":
        return cls("none")

    @classmethod
    def constant(cls, value: float) -> "ImputationRule":
        return cls("constant", float(value))

    @classmethod
    def topk_score(cls) -> "ImputationRule":
        return cls("topk_score")


def missing_similarity_values(result: RetrievalResult,
                              rule: ImputationRule) -> np.ndarray:
    """Vector of m_i fills, one per query token row (float32)."""
    n = result.num_rows
    if rule.kind == "none":
        return np.zeros(n, dtype=np.float32)
    if rule.kind == "constant":
        return np.full(n, np.float32(rule.value), dtype=np.float32)
    if result.k_prime < 1:
        raise RetrievalError("top-k' imputation requires at least one hit per row")
    return result.last_scores().astype(np.float32)


def impute(result: RetrievalResult, row: int,
           rule: ImputationRule) -> float | None:
    """Missing-similarity estimate for one query token; None under ``none``."""
    if rule.kind == "none":
        return None
    return float(missing_similarity_values(result, rule)[row])


def _doc_row_values(result: RetrievalResult, doc_ordinal: int,
                    fills: np.ndarray) -> np.ndarray:
    mask = result.doc_ordinals == doc_ordinal
    masked = np.where(mask, result.scores, np.float32(-np.inf))
    best = masked.max(axis=1)
    covered = mask.any(axis=1)
    return np.where(covered, best, fills).astype(np.float32)


def score_with_fills(result: RetrievalResult, doc_id: str,
                     fills: np.ndarray) -> float:
    """Hit-only score with an explicit missing-similarity vector."""
    fills = np.asarray(fills, dtype=np.float32)
    if fills.shape != (result.num_rows,):
        raise ValueError(
            f"fills must have shape ({result.num_rows},), got {fills.shape}")
    values = _doc_row_values(result, result.ordinal_of(doc_id), fills)
    return float(np.mean(values, dtype=np.float64))


def score_xtr_infer(result: RetrievalResult, doc_id: str,
                    rule: ImputationRule) -> float:
    """Score one candidate purely from its retrieval hits.

    Each query token contributes the best retrieved similarity it has for
    this document, or the rule's fill when it retrieved none; the mean over
    all query tokens is the score. No document embedding is ever read.
    """
    return score_with_fills(result, doc_id,
                            missing_similarity_values(result, rule))


def score_candidates(result: RetrievalResult,
                     rule: ImputationRule) -> dict[int, float]:
    """Hit-only scores for every candidate document ordinal.

    Same arithmetic as :func:`score_xtr_infer`, batched over the whole
    candidate set.
    """
    fills = missing_similarity_values(result, rule)
    n, k = result.doc_ordinals.shape
    flat_docs = result.doc_ordinals.ravel()
    flat_rows = np.repeat(np.arange(n), k)
    flat_scores = result.scores.ravel()
    order = np.lexsort((-flat_scores, flat_rows, flat_docs))
    docs, rows, scores = flat_docs[order], flat_rows[order], flat_scores[order]
    lead = np.ones(order.size, dtype=bool)
    lead[1:] = (docs[1:] != docs[:-1]) | (rows[1:] != rows[:-1])

    out: dict[int, float] = {}
    values: np.ndarray | None = None
    current = -1
    for pos in np.flatnonzero(lead):
        doc = int(docs[pos])
        if doc != current:
            if current >= 0:
                out[current] = float(np.mean(values, dtype=np.float64))
            current = doc
            values = fills.copy()
        values[rows[pos]] = scores[pos]
    if current >= 0:
        out[current] = float(np.mean(values, dtype=np.float64))
    return out

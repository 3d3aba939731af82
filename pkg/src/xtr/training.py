"""Cross-entropy training objective, closed-form gradients, and a checker.

The loss contrasts one positive document against the rest of a mini-batch.
Gradients are taken with respect to the per-row maximum token similarities
while the argmax/alignment structure is held fixed (the score functions are
piecewise linear in the affinity entries; at structure boundaries the loss
is non-differentiable and the checker flags rather than differentiates).

Everything here runs in float64: the finite-difference tolerances assume it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .scoring import affinity, masked_row_values


@dataclass(frozen=True)
class MiniBatch:
    """One query against B candidate documents, one of them positive."""

    query: np.ndarray
    docs: list[np.ndarray]
    positive_index: int

    def __post_init__(self):
        if not self.docs:
            raise ValueError("mini-batch needs at least one document")
        if not 0 <= self.positive_index < len(self.docs):
            raise ValueError(
                f"positive_index {self.positive_index} out of range "
                f"[0, {len(self.docs)})")


def batch_affinities(batch: MiniBatch) -> list[np.ndarray]:
    """Float64 affinity matrix per batch document."""
    q = np.asarray(batch.query, dtype=np.float64)
    return [affinity(q, np.asarray(d, dtype=np.float64)) for d in batch.docs]


def ce_loss(scores, positive_index: int) -> float:
    """-score[positive] + logsumexp(scores), computed with the max shift."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("scores must be a non-empty 1-D sequence")
    if not np.isfinite(s).all():
        raise ValueError("scores contain non-finite values")
    if not 0 <= positive_index < s.size:
        raise ValueError(f"positive_index {positive_index} out of range")
    shift = s.max()
    return float(-(s[positive_index] - shift)
                 + np.log(np.exp(s - shift).sum()))


def softmax(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    shift = s.max()
    e = np.exp(s - shift)
    return e / e.sum()


def colbert_scores(p_batch: list[np.ndarray]) -> np.ndarray:
    """Sum-of-max score per document from precomputed affinities."""
    return np.array([float(np.mean(p.max(axis=1), dtype=np.float64))
                     for p in p_batch])


def xtr_scores(p_batch: list[np.ndarray],
               a_batch: list[np.ndarray]) -> np.ndarray:
    """Alignment-masked score per document (sum of covered maxima / max(Z,1))."""
    out = np.empty(len(p_batch))
    for b, (p, a) in enumerate(zip(p_batch, a_batch)):
        values, covered = masked_row_values(p, a)
        out[b] = values.sum(dtype=np.float64) / max(int(covered.sum()), 1)
    return out


def grad_som(p_batch: list[np.ndarray],
             positive_index: int) -> list[np.ndarray]:
    """Loss gradient w.r.t. each row-max affinity entry, per document.

    Positive doc entries get -(1 - p+)/n, negative doc entries get p_b/n;
    all non-max entries are 0.
    """
    probs = softmax(colbert_scores(p_batch))
    n = p_batch[0].shape[0]
    grads = []
    for b, p in enumerate(p_batch):
        g = np.zeros_like(p, dtype=np.float64)
        coef = (probs[b] - (1.0 if b == positive_index else 0.0)) / n
        g[np.arange(n), np.argmax(p, axis=1)] = coef
        grads.append(g)
    return grads


def grad_xtr(p_batch: list[np.ndarray], a_batch: list[np.ndarray],
             positive_index: int) -> list[np.ndarray]:
    """Loss gradient w.r.t. each retrieved row-max entry, per document.

    The per-document normalizer Z replaces n, so sparsely retrieved
    documents get proportionally larger gradients. Documents with Z = 0
    score a constant 0 and have no perturbable entries.
    """
    z = [int(masked_row_values(p, a)[1].sum())
         for p, a in zip(p_batch, a_batch)]
    if not any(z):
        raise ValueError("gradient undefined: no document retrieved any token")
    probs = softmax(xtr_scores(p_batch, a_batch))
    grads = []
    for b, (p, a) in enumerate(zip(p_batch, a_batch)):
        g = np.zeros_like(p, dtype=np.float64)
        if z[b] > 0:
            coef = (probs[b] - (1.0 if b == positive_index else 0.0)) / z[b]
            masked = np.where(a.astype(bool), p, -np.inf)
            values = masked.max(axis=1)
            for i in np.flatnonzero(np.isfinite(values)):
                g[i, int(np.argmax(masked[i]))] = coef
        grads.append(g)
    return grads


def central_difference(f, x: float, h: float) -> float:
    """(f(x+h) - f(x-h)) / 2h."""
    return (f(x + h) - f(x - h)) / (2.0 * h)


@dataclass(frozen=True)
class GradEntry:
    doc: int
    row: int
    col: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradReport:
    """Analytic-vs-numeric comparison over every perturbable affinity entry."""

    entries: list[GradEntry] = field(default_factory=list)
    excluded: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def median_rel_error(self) -> float:
        if not self.entries:
            return 0.0
        return float(median(e.rel_error for e in self.entries))

    def to_dict(self) -> dict:
        return {
            "checked": len(self.entries),
            "excluded": len(self.excluded),
            "max_rel_error": self.max_rel_error,
            "median_rel_error": self.median_rel_error,
        }


def _rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def finite_diff_check(p_batch: list[np.ndarray], positive_index: int,
                      h: float = 1e-5,
                      a_batch: list[np.ndarray] | None = None) -> GradReport:
    """Verify analytic gradients against central finite differences.

    The alignment masks (when given) are frozen while entries are perturbed;
    row maxima are recomputed, and any entry whose perturbation flips an
    argmax is excluded as a non-differentiable point.
    """
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"h must be in (0, 1e-2], got {h}")
    p_batch = [np.asarray(p, dtype=np.float64) for p in p_batch]
    if a_batch is None:
        analytic = grad_som(p_batch, positive_index)
        base_scores = colbert_scores(p_batch)

        def doc_score(p):
            return float(np.mean(p.max(axis=1), dtype=np.float64))

        def row_argmax(p, i):
            return int(np.argmax(p[i]))
    else:
        analytic = grad_xtr(p_batch, a_batch, positive_index)
        base_scores = xtr_scores(p_batch, a_batch)

    report = GradReport()
    for b, p in enumerate(p_batch):
        if a_batch is not None:
            a_bool = a_batch[b].astype(bool)

            def doc_score(p, _a=a_bool):
                values, covered = masked_row_values(p, _a)
                return float(values.sum(dtype=np.float64)
                             / max(int(covered.sum()), 1))

            def row_argmax(p, i, _a=a_bool):
                masked = np.where(_a[i], p[i], -np.inf)
                if not np.isfinite(masked).any():
                    return -1
                return int(np.argmax(masked))

        scores = base_scores.copy()
        for i in range(p.shape[0]):
            base_arg = row_argmax(p, i)
            for j in range(p.shape[1]):
                flipped = False
                losses = []
                for sign in (+1.0, -1.0):
                    pp = p.copy()
                    pp[i, j] += sign * h
                    if row_argmax(pp, i) != base_arg:
                        flipped = True
                        break
                    scores[b] = doc_score(pp)
                    losses.append(ce_loss(scores, positive_index))
                scores[b] = base_scores[b]
                if flipped:
                    report.excluded.append((b, i, j))
                    continue
                numeric = (losses[0] - losses[1]) / (2.0 * h)
                report.entries.append(GradEntry(
                    doc=b, row=i, col=j,
                    analytic=float(analytic[b][i, j]),
                    numeric=numeric,
                    rel_error=_rel_error(float(analytic[b][i, j]), numeric),
                ))
    return report

"""Closed-form FLOPs estimates for the scoring stage of both pipelines.

Counting convention: a multiply-add is 2 FLOPs, so one d-dimensional inner
product costs 2d. Per candidate document the gather-and-rescore pipeline
pays 2*n*m_bar*d for inner products, n*m_bar for the row maxima, and n for
the final average; with up to n*k' candidates this totals
n^2*k'*(2*m_bar*d + m_bar + 1). The hit-reuse pipeline pays only n*r_bar
for row maxima over already-computed scores plus n for the average, i.e.
n^2*k'*(r_bar + 1).

All arithmetic is exact (Fraction-based) with results rounded to integers,
so corpus-scale parameter values cannot overflow or lose precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class CostModelParams:
    """Workload description for the scoring-stage estimates.

    ``mean_retrieved_per_doc`` (r_bar) is the measured average number of
    retrieval hits backing each candidate document; it never exceeds
    n * k_prime.
    """

    query_tokens: int          # n
    dim: int                   # d
    k_prime: int
    mean_doc_tokens: float     # m_bar
    mean_retrieved_per_doc: float = 1.0   # r_bar
    total_tokens: int | None = None       # M
    num_docs: int | None = None           # L

    def __post_init__(self):
        for name in ("query_tokens", "dim", "k_prime"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mean_doc_tokens <= 0:
            raise ValueError("mean_doc_tokens must be positive")
        if self.mean_retrieved_per_doc < 0:
            raise ValueError("mean_retrieved_per_doc must be >= 0")
        if self.mean_retrieved_per_doc > self.query_tokens * self.k_prime:
            raise ValueError(
                "mean_retrieved_per_doc cannot exceed query_tokens * k_prime")


def _round(x: Fraction) -> int:
    return int(x + Fraction(1, 2)) if x >= 0 else -int(-x + Fraction(1, 2))


def flops_colbert_scoring(p: CostModelParams) -> int:
    """n^2 * k' * (2*m_bar*d + m_bar + 1) as an exact rounded integer."""
    m_bar = Fraction(p.mean_doc_tokens).limit_denominator(10**9)
    per_candidate = 2 * m_bar * p.dim + m_bar + 1
    return _round(p.query_tokens ** 2 * p.k_prime * per_candidate)


def flops_xtr_scoring(p: CostModelParams) -> int:
    """n^2 * k' * (r_bar + 1) as an exact rounded integer."""
    r_bar = Fraction(p.mean_retrieved_per_doc).limit_denominator(10**9)
    return _round(p.query_tokens ** 2 * p.k_prime * (r_bar + 1))


def bytes_gathered(p: CostModelParams) -> int:
    """Worst-case gather volume: n * k' * m_bar * d float32 values, in bytes."""
    m_bar = Fraction(p.mean_doc_tokens).limit_denominator(10**9)
    return _round(p.query_tokens * p.k_prime * m_bar * p.dim * 4)


def floats_gathered(p: CostModelParams) -> int:
    """Raw count of float32 values loaded by the gathering stage."""
    m_bar = Fraction(p.mean_doc_tokens).limit_denominator(10**9)
    return _round(p.query_tokens * p.k_prime * m_bar * p.dim)


def cost_report(p: CostModelParams) -> dict:
    """JSON-ready summary: both estimates, their ratio, gather volume."""
    colbert = flops_colbert_scoring(p)
    xtr = flops_xtr_scoring(p)
    return {
        "colbert": colbert,
        "xtr": xtr,
        "ratio": colbert / xtr,
        "bytes_gathered": bytes_gathered(p),
        "floats_gathered": floats_gathered(p),
    }

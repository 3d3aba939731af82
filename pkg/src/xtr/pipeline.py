"""End-to-end ranking in two modes.

``colbert`` mode is the classic three-stage flow: retrieve top-k' tokens,
gather every token vector of each candidate document, rescore with
sum-of-max. ``xtr`` mode drops the gathering stage entirely: candidates are
scored from the retrieval hits alone, with missing rows imputed.

The xtr scoring path receives only the :class:`RetrievalResult`; there is no
way for it to reach document embeddings, and instrumentation records zero
gathered bytes on every run.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .index import TokenIndex, candidate_docs
from .scoring import ImputationRule, score_candidates, score_colbert
from .store import Query, QuerySet

MODES = ("colbert", "xtr")
DEFAULT_TOP_DOCS = 1000


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for a ranking run.

    ``imputation=None`` means "unset": xtr mode then uses the top-k' score
    rule; colbert mode ignores imputation and warns if one was given.
    """

    mode: str
    k_prime: int
    top_docs: int = DEFAULT_TOP_DOCS
    imputation: ImputationRule | None = None
    instrumentation: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k_prime < 1:
            raise ValueError(f"k_prime must be >= 1, got {self.k_prime}")
        if self.top_docs < 1:
            raise ValueError(f"top_docs must be >= 1, got {self.top_docs}")
        if self.mode == "colbert" and self.imputation is not None:
            warnings.warn("imputation is ignored in colbert mode",
                          UserWarning, stacklevel=2)

    def effective_imputation(self) -> ImputationRule:
        return self.imputation or ImputationRule.topk_score()


@dataclass(frozen=True)
class QueryStats:
    """Exact per-query instrumentation counters (not estimates)."""

    candidates: int
    mean_hits_per_doc: float
    bytes_gathered: int
    search_inner_products: int
    scoring_inner_products: int


@dataclass(frozen=True)
class QueryRun:
    query_id: str
    ranking: list[tuple[str, float]]
    stats: QueryStats | None = None


@dataclass(frozen=True)
class RankedRun:
    mode: str
    k_prime: int
    entries: list[QueryRun] = field(default_factory=list)

    def ranking(self, query_id: str) -> list[tuple[str, float]]:
        for entry in self.entries:
            if entry.query_id == query_id:
                return entry.ranking
        raise KeyError(query_id)


def _rank(scores: dict[str, float], top_docs: int) -> list[tuple[str, float]]:
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ordered[:top_docs]


def _retriever(index: TokenIndex, config: PipelineConfig, retriever):
    if retriever is not None:
        return retriever
    return lambda matrix: index.retrieve(matrix, config.k_prime)


def _run_one_colbert(index: TokenIndex, query: Query, config: PipelineConfig,
                     retrieve) -> QueryRun:
    result = retrieve(query.matrix)
    cands = candidate_docs(result)
    n = query.matrix.rows
    scores: dict[str, float] = {}
    bytes_gathered = 0
    scoring_products = 0
    for ordinal, doc_id in zip(cands.doc_ordinals, cands.doc_ids):
        gathered = index.gather_doc(int(ordinal))
        bytes_gathered += gathered.nbytes
        scoring_products += n * gathered.shape[0]
        scores[doc_id] = score_colbert(query.matrix.data, gathered)
    stats = QueryStats(
        candidates=cands.count,
        mean_hits_per_doc=cands.mean_hits_per_doc,
        bytes_gathered=bytes_gathered,
        search_inner_products=n * index.num_tokens,
        scoring_inner_products=scoring_products,
    ) if config.instrumentation else None
    return QueryRun(query.query_id, _rank(scores, config.top_docs), stats)


def _run_one_xtr(index: TokenIndex, query: Query, config: PipelineConfig,
                 retrieve) -> QueryRun:
    result = retrieve(query.matrix)
    cands = candidate_docs(result)
    by_ordinal = score_candidates(result, config.effective_imputation())
    scores = {result.doc_id(ordinal): value
              for ordinal, value in by_ordinal.items()}
    stats = QueryStats(
        candidates=cands.count,
        mean_hits_per_doc=cands.mean_hits_per_doc,
        bytes_gathered=0,
        search_inner_products=query.matrix.rows * index.num_tokens,
        scoring_inner_products=0,
    ) if config.instrumentation else None
    return QueryRun(query.query_id, _rank(scores, config.top_docs), stats)


def run_queries(index: TokenIndex, queries: QuerySet, config: PipelineConfig,
                retriever=None) -> RankedRun:
    """Rank every query; output is independent of the worker count.

    ``retriever`` optionally replaces exact retrieval (e.g. with the
    partitioned index); it maps a query TokenMatrix to a RetrievalResult.
    """
    runner = _run_one_colbert if config.mode == "colbert" else _run_one_xtr
    retrieve = _retriever(index, config, retriever)
    items = list(queries)
    if config.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            entries = list(pool.map(
                lambda q: runner(index, q, config, retrieve), items))
    else:
        entries = [runner(index, q, config, retrieve) for q in items]
    return RankedRun(config.mode, config.k_prime, entries)


def run_colbert(index: TokenIndex, queries: QuerySet,
                config: PipelineConfig) -> RankedRun:
    if config.mode != "colbert":
        raise ValueError("config.mode must be 'colbert'")
    return run_queries(index, queries, config)


def run_xtr(index: TokenIndex, queries: QuerySet,
            config: PipelineConfig) -> RankedRun:
    if config.mode != "xtr":
        raise ValueError("config.mode must be 'xtr'")
    return run_queries(index, queries, config)


def write_trec_run(run: RankedRun, fh, tag: str = "xtr") -> None:
    """Emit `qid Q0 doc_id rank score tag` lines, scores to 6 decimals."""
    for entry in run.entries:
        for rank, (doc_id, score) in enumerate(entry.ranking, start=1):
            fh.write(f"{entry.query_id} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def aggregate_stats(run: RankedRun) -> dict:
    """Corpus-level instrumentation summary across all queries."""
    stats = [e.stats for e in run.entries if e.stats is not None]
    if not stats:
        return {}
    return {
        "queries": len(stats),
        "total_candidates": int(sum(s.candidates for s in stats)),
        "mean_hits_per_doc": float(np.mean([s.mean_hits_per_doc for s in stats])),
        "bytes_gathered": int(sum(s.bytes_gathered for s in stats)),
        "search_inner_products": int(sum(s.search_inner_products for s in stats)),
        "scoring_inner_products": int(sum(s.scoring_inner_products for s in stats)),
    }

"""Late-interaction retrieval engine.

Scores query-document pairs from token-level embedding interactions and
supports two inference flows: the classic retrieve-gather-rescore pipeline
and a gather-free pipeline that ranks candidates purely from retrieved
token similarities with missing-similarity imputation. Also ships the
matching training objective with analytic gradients, a scoring-stage FLOPs
model, IR metrics, and retrieval-quality probes.
"""

from .cost import CostModelParams, cost_report, flops_colbert_scoring, flops_xtr_scoring
from .index import (
    CandidateSet,
    PartitionedTokenIndex,
    RetrievalResult,
    TokenHit,
    TokenIndex,
    build_partitions,
    candidate_docs,
)
from .pipeline import PipelineConfig, RankedRun, run_colbert, run_queries, run_xtr
from .scoring import (
    ImputationRule,
    affinity,
    impute,
    score_colbert,
    score_xtr_infer,
    score_xtr_train,
)
from .store import (
    CorpusStats,
    DocumentRecord,
    Query,
    QuerySet,
    TokenMatrix,
    build_corpus,
    load_embeddings,
    load_queries,
    write_embeddings,
)
from .training import MiniBatch, ce_loss, finite_diff_check, grad_som, grad_xtr

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "CorpusStats",
    "CostModelParams",
    "DocumentRecord",
    "ImputationRule",
    "MiniBatch",
    "PartitionedTokenIndex",
    "PipelineConfig",
    "Query",
    "QuerySet",
    "RankedRun",
    "RetrievalResult",
    "TokenHit",
    "TokenIndex",
    "TokenMatrix",
    "affinity",
    "build_corpus",
    "build_partitions",
    "candidate_docs",
    "ce_loss",
    "cost_report",
    "finite_diff_check",
    "flops_colbert_scoring",
    "flops_xtr_scoring",
    "grad_som",
    "grad_xtr",
    "impute",
    "load_embeddings",
    "load_queries",
    "run_colbert",
    "run_queries",
    "run_xtr",
    "score_colbert",
    "score_xtr_infer",
    "score_xtr_train",
    "write_embeddings",
]

"""Rank-cutoff retrieval metrics over runs and relevance judgments.

Runs are ``{query_id: [doc_id, ...]}`` in rank order; qrels are
``{query_id: {doc_id: graded relevance}}``. A document counts as relevant
when its grade is positive. nDCG uses the 2^rel - 1 gain and 1/log2(rank+1)
discount.

Queries appearing in the run but not in the qrels are excluded (and
counted); queries whose judgments hold no positive grade are skipped (and
counted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

Run = dict[str, list[str]]
Qrels = dict[str, dict[str, int]]


@dataclass(frozen=True)
class EvalCounts:
    evaluated: int
    missing_qrels: int
    no_positive: int


def load_run(path: str | Path) -> Run:
    """Parse a 6-column TREC run file into rank-ordered doc lists."""
    by_query: dict[str, list[tuple[int, str]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(
                    f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
            qid, _, doc_id, rank, _, _ = parts
            by_query.setdefault(qid, []).append((int(rank), doc_id))
    return {qid: [doc for _, doc in sorted(items)]
            for qid, items in by_query.items()}


def load_qrels(path: str | Path) -> Qrels:
    """Parse 4-column `qid 0 doc_id rel` judgments."""
    qrels: Qrels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(
                    f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            qid, _, doc_id, rel = parts
            qrels.setdefault(qid, {})[doc_id] = int(rel)
    return qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for doc_id in sorted(qrels[qid]):
                fh.write(f"{qid}\t0\t{doc_id}\t{qrels[qid][doc_id]}\n")


def partition_queries(run: Run, qrels: Qrels) -> tuple[list[str], EvalCounts]:
    """Split run queries into evaluable / unjudged / positives-free."""
    evaluable, missing, no_positive = [], 0, 0
    for qid in run:
        judged = qrels.get(qid)
        if judged is None:
            missing += 1
        elif not any(rel > 0 for rel in judged.values()):
            no_positive += 1
        else:
            evaluable.append(qid)
    return evaluable, EvalCounts(len(evaluable), missing, no_positive)


def _relevant_set(judged: dict[str, int]) -> set[str]:
    return {doc for doc, rel in judged.items() if rel > 0}


def mrr_at_k(run: Run, qrels: Qrels, k: int) -> float:
    """Mean reciprocal rank of the first relevant document within top k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    evaluable, _ = partition_queries(run, qrels)
    if not evaluable:
        return 0.0
    total = 0.0
    for qid in evaluable:
        relevant = _relevant_set(qrels[qid])
        for rank, doc_id in enumerate(run[qid][:k], start=1):
            if doc_id in relevant:
                total += 1.0 / rank
                break
    return total / len(evaluable)


def _dcg(grades: list[int]) -> float:
    return sum((2 ** rel - 1) / math.log2(rank + 1)
               for rank, rel in enumerate(grades, start=1))


def ndcg_at_k(run: Run, qrels: Qrels, k: int) -> float:
    """Normalized discounted cumulative gain at cutoff k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    evaluable, _ = partition_queries(run, qrels)
    if not evaluable:
        return 0.0
    total = 0.0
    for qid in evaluable:
        judged = qrels[qid]
        gains = [judged.get(doc_id, 0) for doc_id in run[qid][:k]]
        ideal = sorted(judged.values(), reverse=True)[:k]
        idcg = _dcg(ideal)
        total += _dcg(gains) / idcg if idcg > 0 else 0.0
    return total / len(evaluable)


def recall_at_k(run: Run, qrels: Qrels, k: int) -> float:
    """Mean fraction of relevant documents found within top k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    evaluable, _ = partition_queries(run, qrels)
    if not evaluable:
        return 0.0
    total = 0.0
    for qid in evaluable:
        relevant = _relevant_set(qrels[qid])
        total += len(relevant.intersection(run[qid][:k])) / len(relevant)
    return total / len(evaluable)


def evaluate_run(run: Run, qrels: Qrels, mrr_k: int = 10, ndcg_k: int = 10,
                 recall_k: int = 100) -> dict:
    """All three metrics plus the skip/warning counters, JSON-ready."""
    _, counts = partition_queries(run, qrels)
    return {
        f"mrr@{mrr_k}": mrr_at_k(run, qrels, mrr_k),
        f"ndcg@{ndcg_k}": ndcg_at_k(run, qrels, ndcg_k),
        f"recall@{recall_k}": recall_at_k(run, qrels, recall_k),
        "evaluated_queries": counts.evaluated,
        "queries_missing_qrels": counts.missing_qrels,
        "queries_without_positives": counts.no_positive,
    }

"""Deterministic synthetic corpora for the self-test and exercises.

Everything here is seed-driven; identical seeds produce identical stores,
queries, and judgments byte for byte.
"""

from __future__ import annotations

import numpy as np

from .index import TokenIndex
from .metrics import Qrels
from .store import (
    CorpusStats,
    DocumentRecord,
    Query,
    QuerySet,
    TokenMatrix,
)


def make_index(embeddings: np.ndarray, token_counts: list[int],
               normalized: bool = False,
               doc_ids: list[str] | None = None,
               token_texts: list[list[str]] | None = None) -> TokenIndex:
    """Assemble a TokenIndex straight from arrays (no files involved)."""
    matrix = TokenMatrix(np.asarray(embeddings, dtype=np.float32),
                         normalized=normalized)
    if doc_ids is None:
        doc_ids = [f"d{i:04d}" for i in range(len(token_counts))]
    records = []
    offset = 0
    for i, count in enumerate(token_counts):
        texts = tuple(token_texts[i]) if token_texts is not None else None
        records.append(DocumentRecord(doc_ids[i], offset, count, texts))
        offset += count
    if offset != matrix.rows:
        raise ValueError(
            f"token counts sum to {offset}, matrix has {matrix.rows} rows")
    stats = CorpusStats(len(records), offset, offset / len(records))
    return TokenIndex(matrix, records, stats)


def random_unit_vectors(rng: np.random.Generator, count: int,
                        dim: int) -> np.ndarray:
    vecs = rng.normal(size=(count, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs.astype(np.float32)


def random_corpus_index(rng: np.random.Generator, num_docs: int,
                        max_doc_tokens: int, dim: int) -> TokenIndex:
    counts = [int(rng.integers(1, max_doc_tokens + 1)) for _ in range(num_docs)]
    embeddings = random_unit_vectors(rng, sum(counts), dim)
    return make_index(embeddings, counts, normalized=True)


def random_query_set(rng: np.random.Generator, num_queries: int,
                     max_query_tokens: int, dim: int) -> QuerySet:
    queries = []
    for i in range(num_queries):
        n = int(rng.integers(1, max_query_tokens + 1))
        matrix = TokenMatrix(random_unit_vectors(rng, n, dim), normalized=True)
        queries.append(Query(f"q{i:03d}", matrix))
    return QuerySet(tuple(queries))


def labeled_fixture(rng: np.random.Generator, num_docs: int = 40,
                    num_queries: int = 8, dim: int = 16,
                    query_tokens: int = 4, doc_tokens: int = 6,
                    noise: float = 0.35) -> tuple[TokenIndex, QuerySet, Qrels]:
    """Corpus + queries + judgments where each query has one gold document.

    Gold documents reuse their query's token directions plus noise, so the
    gold is retrievable but not trivially rank-1 under every scorer.
    """
    vocab = [f"tok{i:03d}" for i in range(64)]
    queries = []
    query_vecs = []
    for i in range(num_queries):
        vecs = random_unit_vectors(rng, query_tokens, dim)
        texts = tuple(vocab[int(v)] for v in
                      rng.integers(0, len(vocab), size=query_tokens))
        queries.append(Query(f"q{i:03d}",
                             TokenMatrix(vecs, normalized=True), texts))
        query_vecs.append(vecs)

    doc_blocks = []
    doc_texts: list[list[str]] = []
    counts = []
    qrels: Qrels = {}
    for i in range(num_docs):
        block = rng.normal(size=(doc_tokens, dim))
        texts = [vocab[int(v)] for v in
                 rng.integers(0, len(vocab), size=doc_tokens)]
        if i < num_queries:
            # seed the gold document with its query's token directions
            base = query_vecs[i].astype(np.float64)
            for t in range(min(query_tokens, doc_tokens)):
                block[t] = base[t] + noise * rng.normal(size=dim)
                texts[t] = queries[i].token_texts[t]
            qrels[f"q{i:03d}"] = {f"d{i:04d}": 1}
        block /= np.linalg.norm(block, axis=1, keepdims=True)
        doc_blocks.append(block.astype(np.float32))
        doc_texts.append(texts)
        counts.append(doc_tokens)
    index = make_index(np.concatenate(doc_blocks, axis=0), counts,
                       normalized=True, token_texts=doc_texts)
    return index, QuerySet(tuple(queries)), qrels


def peaked_negative_batch() -> dict:
    """Adversarial batch where sum-of-max and token retrieval disagree.

    The positive document's per-row maxima are all exactly 0.8 while each
    negative holds one token scoring 0.9 against a distinct query token (and
    strongly negative against the rest). Sum-of-max ranks the positive far
    ahead, yet top-1 token retrieval returns only negative tokens, so the
    retrieval-aligned score of the positive is 0.

    Returns float64 matrices for exact scoring plus a float32 index for the
    retrieval side.
    """
    n = 4
    dim = 4
    peak = 0.9
    off_axis = 6.0
    query = np.eye(n, dim, dtype=np.float64)
    positive = np.zeros((n, dim), dtype=np.float64)
    for j in range(n):
        positive[j, j] = 0.8
        positive[j, (j + 1) % dim] = 0.6
    negatives = []
    for i in range(n):
        token = np.full((1, dim), -off_axis, dtype=np.float64)
        token[0, i] = peak
        negatives.append(token)

    docs = [positive] + negatives
    embeddings = np.concatenate(docs, axis=0).astype(np.float32)
    index = make_index(embeddings, [n] + [1] * n, normalized=False,
                       doc_ids=["pos"] + [f"neg{i}" for i in range(n)])
    return {
        "query": query,
        "docs": docs,
        "positive_index": 0,
        "index": index,
        "query_matrix": TokenMatrix(query.astype(np.float32),
                                    normalized=True),
        "peak_score": peak,
        "positive_score": 0.8,
    }

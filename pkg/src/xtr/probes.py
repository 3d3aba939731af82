"""Token-retrieval diagnostics: per-rank hit quality and score histograms.

Each probe aggregates over the retrieval results of many queries and is
emitted as CSV for external plotting. Probabilities are plain recounts;
there is no smoothing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import XTRError
from .index import RetrievalResult
from .metrics import Qrels


@dataclass(frozen=True)
class RankProbe:
    rank: int
    probability: float
    count: int


def gold_token_prob(results: dict[str, RetrievalResult], qrels: Qrels,
                    max_rank: int) -> list[RankProbe]:
    """P(hit at rank comes from a relevant document), per rank.

    For rank r the denominator is the number of query-token rows holding at
    least r hits; the numerator counts rows whose rank-r hit belongs to a
    document judged relevant for that query.
    """
    if max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    probes = []
    for rank in range(1, max_rank + 1):
        hits = 0
        total = 0
        for query_id, result in results.items():
            judged = qrels.get(query_id)
            if judged is None:
                raise XTRError(f"query {query_id!r} missing from qrels")
            relevant = {doc for doc, rel in judged.items() if rel > 0}
            if rank > result.k_prime:
                continue
            for row in range(result.num_rows):
                total += 1
                ordinal = int(result.doc_ordinals[row, rank - 1])
                if result.doc_id(ordinal) in relevant:
                    hits += 1
        if total == 0:
            raise XTRError(f"no hits at rank {rank}")
        probes.append(RankProbe(rank, hits / total, total))
    return probes


def lexical_match_prob(results: dict[str, RetrievalResult],
                       query_texts: dict[str, list[str]],
                       corpus_texts: list[str],
                       max_rank: int) -> list[RankProbe]:
    """P(hit at rank is lexically identical to its query token), per rank.

    Identity is case-folded exact string equality between the query token's
    surface form and the retrieved corpus token's surface form.
    """
    if max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    probes = []
    for rank in range(1, max_rank + 1):
        matches = 0
        total = 0
        for query_id, result in results.items():
            texts = query_texts.get(query_id)
            if texts is None:
                raise XTRError(f"query {query_id!r} has no token texts")
            if len(texts) != result.num_rows:
                raise XTRError(
                    f"query {query_id!r}: {len(texts)} texts for "
                    f"{result.num_rows} token rows")
            if rank > result.k_prime:
                continue
            for row in range(result.num_rows):
                total += 1
                token_idx = int(result.token_indices[row, rank - 1])
                if corpus_texts[token_idx].casefold() == texts[row].casefold():
                    matches += 1
        if total == 0:
            raise XTRError(f"no hits at rank {rank}")
        probes.append(RankProbe(rank, matches / total, total))
    return probes


def score_histogram(results: dict[str, RetrievalResult] | RetrievalResult,
                    bins: int, normalized: bool = True,
                    value_range: tuple[float, float] = (-1.0, 1.0)
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Density histogram of all retrieval scores (area integrates to 1).

    Requires unit-normalized embeddings so scores are cosine similarities
    inside the fixed value range.
    """
    if not normalized:
        raise XTRError("score histogram requires a normalized embedding store")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    if isinstance(results, RetrievalResult):
        results = {"": results}
    scores = np.concatenate([r.scores.ravel() for r in results.values()])
    densities, edges = np.histogram(scores, bins=bins, range=value_range,
                                    density=True)
    return edges, densities


def write_rank_csv(probes: list[RankProbe], fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(["rank", "probability", "count"])
    for probe in probes:
        writer.writerow([probe.rank, f"{probe.probability:.10g}", probe.count])


def write_histogram_csv(edges: np.ndarray, densities: np.ndarray, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(["bin_left", "bin_right", "density"])
    for i, density in enumerate(densities):
        writer.writerow([f"{edges[i]:.10g}", f"{edges[i + 1]:.10g}",
                         f"{density:.10g}"])

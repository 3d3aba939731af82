"""Pure-NumPy top-k inner-product kernel (fallback backend).

Matches the compiled kernel's contract: scores are accumulated in float64,
rounded to float32 before any comparison, and ties are broken by ascending
token index.
"""

from __future__ import annotations

import numpy as np


def topk_inner_products(corpus: np.ndarray, queries: np.ndarray,
                        k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k maximum inner product search.

    Returns ``(indices, scores)`` of shape (num_queries, k), each row sorted
    by (score desc, token index asc).
    """
    num_tokens = corpus.shape[0]
    scores = (queries.astype(np.float64) @ corpus.astype(np.float64).T)
    scores = scores.astype(np.float32)

    out_idx = np.empty((queries.shape[0], k), dtype=np.int64)
    out_scores = np.empty((queries.shape[0], k), dtype=np.float32)
    for row in range(queries.shape[0]):
        s = scores[row]
        if k < num_tokens:
            part = np.argpartition(-s, k - 1)[:k]
            # argpartition is value-exact but tie order at the boundary is
            # arbitrary; rebuild the selection with the deterministic rule.
            threshold = s[part].min()
            above = np.flatnonzero(s > threshold)
            ties = np.flatnonzero(s == threshold)[:k - above.size]
            chosen = np.concatenate([above, ties])
        else:
            chosen = np.arange(num_tokens)
        order = np.lexsort((chosen, -s[chosen]))
        chosen = chosen[order]
        out_idx[row] = chosen
        out_scores[row] = s[chosen]
    return out_idx, out_scores

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled top-k inner-product kernel.

Dot products are accumulated in float64 and rounded to float32 before any
comparison; per-query bounded heaps keep the k best under the total order
(score desc, token index asc). Selection is exact, not approximate.

The corpus is streamed exactly once in token blocks against a transposed
copy, scoring every query row per block, so the working set stays at
O(queries x block + queries x k) no matter how large the corpus is; the
full affinity matrix is never materialized (the NumPy fallback allocates
it, plus a float64 copy of the corpus). Each (query, token) dot product
sums its dimensions in order, so results are bit-identical to a scalar
loop.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF BLOCK = 64


cdef inline bint _better(float s_a, long i_a, float s_b, long i_b) nogil:
    # total order: higher score wins, ties go to the lower token index
    if s_a != s_b:
        return s_a > s_b
    return i_a < i_b


cdef void _sift_down(float* hs, long* hi, Py_ssize_t size) nogil:
    # root holds the WORST kept element; children must not be worse
    cdef Py_ssize_t pos = 0, child
    cdef float s
    cdef long i
    while True:
        child = 2 * pos + 1
        if child >= size:
            return
        if child + 1 < size and _better(hs[child], hi[child],
                                        hs[child + 1], hi[child + 1]):
            child += 1
        if _better(hs[child], hi[child], hs[pos], hi[pos]):
            return
        s = hs[pos]; i = hi[pos]
        hs[pos] = hs[child]; hi[pos] = hi[child]
        hs[child] = s; hi[child] = i
        pos = child


cdef void _sift_up(float* hs, long* hi, Py_ssize_t pos) nogil:
    cdef Py_ssize_t parent
    cdef float s
    cdef long i
    while pos > 0:
        parent = (pos - 1) // 2
        if _better(hs[parent], hi[parent], hs[pos], hi[pos]):
            s = hs[pos]; i = hi[pos]
            hs[pos] = hs[parent]; hi[pos] = hi[parent]
            hs[parent] = s; hi[parent] = i
            pos = parent
        else:
            return


def topk_inner_products(const float[:, ::1] corpus,
                        const float[:, ::1] queries,
                        Py_ssize_t k):
    """Exact top-k MIPS; returns (indices, scores) shaped (num_queries, k)."""
    cdef Py_ssize_t num_tokens = corpus.shape[0]
    cdef Py_ssize_t dim = corpus.shape[1]
    cdef Py_ssize_t num_queries = queries.shape[0]

    # (dim, tokens) layout keeps the per-dimension block loads contiguous
    transposed = np.ascontiguousarray(np.asarray(corpus).T)
    cdef const float[:, ::1] ct = transposed
    cdef const float* ctp = &ct[0, 0]
    cdef const float* qp = &queries[0, 0]

    idx_arr = np.empty((num_queries, k), dtype=np.int64)
    score_arr = np.empty((num_queries, k), dtype=np.float32)
    cdef long[:, ::1] out_idx = idx_arr
    cdef float[:, ::1] out_scores = score_arr

    heap_scores = np.empty((num_queries, k), dtype=np.float32)
    heap_idx = np.empty((num_queries, k), dtype=np.int64)
    sizes_arr = np.zeros(num_queries, dtype=np.int64)
    acc_arr = np.empty((num_queries, BLOCK), dtype=np.float64)
    cdef float[:, ::1] hs_view = heap_scores
    cdef long[:, ::1] hi_view = heap_idx
    cdef long[::1] sizes = sizes_arr
    cdef double[:, ::1] acc_view = acc_arr
    cdef double* accp = &acc_view[0, 0]

    cdef float* hs
    cdef long* hi
    cdef double* lane
    cdef const float* row
    cdef double qv
    cdef Py_ssize_t t, width, j, q, i, size, slot
    cdef long token
    cdef float s

    with nogil:
        t = 0
        while t < num_tokens:
            width = num_tokens - t
            if width > BLOCK:
                width = BLOCK
            for q in range(num_queries):
                lane = accp + q * BLOCK
                for i in range(width):
                    lane[i] = 0.0
            for j in range(dim):
                row = ctp + j * num_tokens + t
                for q in range(num_queries):
                    qv = <double>qp[q * dim + j]
                    lane = accp + q * BLOCK
                    for i in range(width):
                        lane[i] += qv * <double>row[i]
            for q in range(num_queries):
                hs = &hs_view[q, 0]
                hi = &hi_view[q, 0]
                lane = accp + q * BLOCK
                size = sizes[q]
                for i in range(width):
                    s = <float>lane[i]
                    token = t + i
                    if size < k:
                        hs[size] = s
                        hi[size] = token
                        size += 1
                        _sift_up(hs, hi, size - 1)
                    elif _better(s, token, hs[0], hi[0]):
                        hs[0] = s
                        hi[0] = token
                        _sift_down(hs, hi, size)
                sizes[q] = size
            t += width

        # drain each heap, worst first, into its output row reversed
        for q in range(num_queries):
            hs = &hs_view[q, 0]
            hi = &hi_view[q, 0]
            size = sizes[q]
            for slot in range(size - 1, -1, -1):
                out_scores[q, slot] = hs[0]
                out_idx[q, slot] = hi[0]
                size -= 1
                hs[0] = hs[size]
                hi[0] = hi[size]
                _sift_down(hs, hi, size)

    return idx_arr, score_arr

"""Top-k inner-product search kernels.

A compiled Cython kernel is preferred; a pure-NumPy implementation with the
identical contract is the fallback. Selection happens once at import and can
be forced with ``XTR_KERNEL=cython`` or ``XTR_KERNEL=numpy``.
"""

from __future__ import annotations

import os

from . import _topk_np

try:
    from . import _topk_cy
except ImportError:  # extension not built on this install
    _topk_cy = None

_FORCED = os.environ.get("XTR_KERNEL", "").strip().lower()
if _FORCED == "numpy":
    _active = _topk_np
    BACKEND = "numpy"
elif _FORCED == "cython":
    if _topk_cy is None:
        raise ImportError("XTR_KERNEL=cython but the compiled kernel is missing")
    _active = _topk_cy
    BACKEND = "cython"
elif _topk_cy is not None:
    _active = _topk_cy
    BACKEND = "cython"
else:
    _active = _topk_np
    BACKEND = "numpy"


def topk_inner_products(corpus, queries, k):
    """Exact top-k MIPS via the active backend; see backend docstrings."""
    return _active.topk_inner_products(corpus, queries, k)


def available_backends() -> dict:
    """Name -> kernel function, for tests and benchmarks that compare both."""
    backends = {"numpy": _topk_np.topk_inner_products}
    if _topk_cy is not None:
        backends["cython"] = _topk_cy.topk_inner_products
    return backends

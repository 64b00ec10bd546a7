"""Backend selection for the reactive replay loops.

The compiled module is used when it was built and ``MTECACHE_PURE_PYTHON``
is unset; otherwise the pure-Python versions stand in with identical
results.
"""

import os

import numpy as np

from mtecache.simulator import _kernels_py

_compiled = None
if not os.environ.get("MTECACHE_PURE_PYTHON"):
    try:
        from mtecache.simulator import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    if backend == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {backend!r}")


def _prepare(seq):
    seq = np.ascontiguousarray(seq, dtype=np.int64)
    if seq.size and seq.min() < 0:
        raise ValueError("content ids must be non-negative")
    return seq, int(seq.max()) + 1 if seq.size else 1


def lru_hits(seq, capacity, backend=None):
    seq, n_ids = _prepare(seq)
    return _impl(backend).lru_hits(seq, int(capacity), n_ids).astype(bool)


def lfu_hits(seq, capacity, backend=None):
    seq, n_ids = _prepare(seq)
    return _impl(backend).lfu_hits(seq, int(capacity), n_ids).astype(bool)


POLICIES = {"lru": lru_hits, "lfu": lfu_hits}

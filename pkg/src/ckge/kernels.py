"""Hot-loop kernels, compiled when available.

Set ``CKGE_PURE_PYTHON=1`` to force the numpy implementations.
"""
import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("CKGE_PURE_PYTHON") == "1":
        raise ImportError
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "numpy"


def _i64(x):
    return np.ascontiguousarray(x, dtype=np.int64)


def neg_distances(q, cand, p, impl=None):
    """``out[a, c] = -||q[a] - cand[c]||_p`` for p in {1, 2}."""
    impl = impl or _impl
    return impl.neg_distances(
        np.ascontiguousarray(q, dtype=np.float64), np.ascontiguousarray(cand, dtype=np.float64), int(p)
    )


def count_better(scores, true_idx, split, n_cand, excl_ptr, excl_idx, impl=None):
    impl = impl or _impl
    return impl.count_better(
        np.ascontiguousarray(scores, dtype=np.float64),
        _i64(true_idx),
        _i64(split),
        _i64(n_cand),
        _i64(excl_ptr),
        _i64(excl_idx),
    )


def scatter_add_rows(rows, values, n_rows, impl=None):
    impl = impl or _impl
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), values.reshape(0, values.shape[1])
    return impl.scatter_add_rows(_i64(rows), values, int(n_rows))

"""Backend selection for the hot scans.

The compiled module is used when it imports; set ``EDRL_PURE_PYTHON=1`` to
force the NumPy/Python fallback. Both expose the same three functions.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("EDRL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _ids(seq) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(seq, dtype=np.int64).reshape(-1))


def logcumsumexp_backward(x: np.ndarray, out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return _impl.logcumsumexp_backward(x, out, g)


def prefix_error_increments(hyp, ref) -> np.ndarray:
    return np.asarray(_impl.prefix_error_increments(_ids(hyp), _ids(ref)), dtype=np.int64)


def levenshtein(a, b) -> int:
    return int(_impl.levenshtein(_ids(a), _ids(b)))

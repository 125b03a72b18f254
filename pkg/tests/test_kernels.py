import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from edrl import _kernels_py, kernels
from oracles import edit_distance, prefix_min_curve

try:
    from edrl import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))


def ids(seq):
    return np.ascontiguousarray(np.asarray(seq, dtype=np.int64))


@pytest.mark.parametrize("impl", BACKENDS)
def test_prefix_increments_worked_fixture(impl):
    hyp, ref = ids([ord(c) for c in "helo whyld"]), ids([ord(c) for c in "hello world"])
    assert list(impl.prefix_error_increments(hyp, ref)) == [0, 0, 0, 1, 0, 0, 1, 1, 0, 0]
    assert impl.levenshtein(hyp, ref) == 3


@pytest.mark.parametrize("impl", BACKENDS)
def test_empty_sides(impl):
    assert list(impl.prefix_error_increments(ids([]), ids([1, 2]))) == []
    assert list(impl.prefix_error_increments(ids([1, 2, 3]), ids([]))) == [1, 1, 1]
    assert impl.levenshtein(ids([]), ids([4, 5])) == 2


@pytest.mark.parametrize("impl", BACKENDS)
def test_kernels_match_oracles(impl, rng):
    for _ in range(200):
        h = rng.integers(0, 4, size=rng.integers(0, 10))
        r = rng.integers(0, 4, size=rng.integers(0, 10))
        curve = prefix_min_curve(list(h), list(r))
        assert list(impl.prefix_error_increments(ids(h), ids(r))) == list(np.diff(curve))
        assert impl.levenshtein(ids(h), ids(r)) == edit_distance(list(h), list(r))


@pytest.mark.parametrize("impl", BACKENDS)
def test_logcumsumexp_backward_matches_dense(impl, rng):
    x = rng.normal(size=(5, 9)) * 30
    out = np.logaddexp.accumulate(x, axis=1)
    g = rng.normal(size=x.shape)
    dense = np.zeros_like(x)
    for r in range(5):
        for j in range(9):
            for k in range(j + 1):
                dense[r, k] += g[r, j] * np.exp(x[r, k] - out[r, j])
    np.testing.assert_allclose(impl.logcumsumexp_backward(x, out, g), dense, rtol=1e-10, atol=1e-300)


def test_logcumsumexp_backward_handles_minus_inf():
    x = np.array([[0.0, -np.inf, 1.0, -np.inf]])
    out = np.logaddexp.accumulate(x, axis=1)
    g = np.ones_like(x)
    for impl in [b.values[0] for b in BACKENDS]:
        got = impl.logcumsumexp_backward(x, out, g)
        assert np.all(np.isfinite(got))
        assert got[0, 1] == 0.0 and got[0, 3] == 0.0


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
def test_backends_agree_bitwise_on_integer_kernels(rng):
    for _ in range(100):
        h = ids(rng.integers(0, 6, size=rng.integers(0, 15)))
        r = ids(rng.integers(0, 6, size=rng.integers(0, 15)))
        assert np.array_equal(_ckernels.prefix_error_increments(h, r), _kernels_py.prefix_error_increments(h, r))
        assert _ckernels.levenshtein(h, r) == _kernels_py.levenshtein(h, r)


def test_backend_selected_at_import():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython"


def test_pure_python_override():
    env = dict(os.environ, EDRL_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from edrl import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


def test_reload_keeps_interface():
    mod = importlib.reload(kernels)
    for name in ("logcumsumexp_backward", "prefix_error_increments", "levenshtein"):
        assert callable(getattr(mod, name))

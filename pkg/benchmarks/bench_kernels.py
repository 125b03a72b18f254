"""Time the compiled kernels against the NumPy/Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Also times one end-to-end RNN-T training step on the default model with each
backend, since that is where the scan kernels actually matter.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from edrl import _kernels_py

try:
    from edrl import _ckernels
except ImportError:
    _ckernels = None


def kernel_cases(rng):
    x = rng.normal(size=(64, 120))
    out = np.logaddexp.accumulate(x, axis=1)
    g = rng.normal(size=x.shape)
    hyp = rng.integers(0, 20, size=60).astype(np.int64)
    ref = rng.integers(0, 20, size=60).astype(np.int64)
    return {
        "logcumsumexp_backward 64x120": lambda k: k.logcumsumexp_backward(x, out, g),
        "prefix_error_increments 60x60": lambda k: k.prefix_error_increments(hyp, ref),
        "levenshtein 60x60": lambda k: k.levenshtein(hyp, ref),
    }


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


TRAIN_STEP = """
import time, numpy as np
from edrl import model as tm, numerics as nx, kernels
from edrl.data import SynthConfig, gen_split
from edrl.train import make_batch, batch_rnnt_loss
params = tm.ModelParameters.init(tm.ModelConfig())
batch = make_batch(gen_split(SynthConfig(), 0, 16))
times = []
for _ in range(3):
    t = time.perf_counter()
    nx.backward(batch_rnnt_loss(params, batch), dict(params.items()))
    times.append(time.perf_counter() - t)
print(kernels.BACKEND, min(times))
"""


def train_step(pure: bool) -> str:
    env = dict(os.environ, EDRL_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", TRAIN_STEP], env=env, capture_output=True, text=True, check=True)
    backend, seconds = out.stdout.split()
    return f"{backend:<7} {1e3 * float(seconds):9.1f} ms"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _ckernels is None:
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'kernel':<32} {'python':>12} {'cython':>12} {'speedup':>8}")
    for name, call in kernel_cases(np.random.default_rng(0)).items():
        py = best_of(lambda: call(_kernels_py), args.repeat)
        cy = best_of(lambda: call(_ckernels), args.repeat)
        print(f"{name:<32} {1e6 * py:10.1f}us {1e6 * cy:10.1f}us {py / cy:7.1f}x")
    print("\nRNN-T forward+backward, batch of 16, default model:")
    print("  " + train_step(pure=True))
    print("  " + train_step(pure=False))


if __name__ == "__main__":
    main()

"""Compare the compiled kernels with the numpy fallback.

Runs each kernel on the shapes the reference FCN sees during training and
prints the median time per call for both backends, plus one full
forward/backward pass through the reference model.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import importlib
import os
import statistics
import subprocess
import sys
import timeit

import numpy as np

from prunemap.nn import _pykernels

SHAPES = [  # (batch, c_in, c_out, size, kernel)
    (1, 3, 8, 32, 3),
    (1, 16, 16, 8, 3),
    (4, 32, 64, 8, 3),
]


def _median(fn, repeats):
    fn()  # warm up
    return statistics.median(timeit.repeat(fn, number=1, repeat=repeats))


def bench_kernels(repeats):
    try:
        ck = importlib.import_module("prunemap.nn._ckernels")
    except ImportError:
        print("compiled kernels not built; only the fallback is timed")
        ck = None
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'shape':<20}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for n, ci, co, s, k in SHAPES:
        x = rng.standard_normal((n, ci, s, s)).astype(np.float32)
        w = rng.standard_normal((co, ci, k, k)).astype(np.float32)
        b = rng.standard_normal(co).astype(np.float32)
        gy = rng.standard_normal((n, co, s, s)).astype(np.float32)
        xp = rng.standard_normal((n, co, s, s)).astype(np.float32)
        _, arg = _pykernels.maxpool2d_forward(xp, 2, 2)
        gp = rng.standard_normal(arg.shape).astype(np.float32)
        cases = {
            "conv2d_forward": lambda m: m.conv2d_forward(x, w, b, 1, 1),
            "conv2d_backward_input": lambda m: m.conv2d_backward_input(gy, w, s, s, 1, 1),
            "conv2d_backward_weight": lambda m: m.conv2d_backward_weight(x, gy, k, k, 1, 1),
            "maxpool2d_forward": lambda m: m.maxpool2d_forward(xp, 2, 2),
            "maxpool2d_backward": lambda m: m.maxpool2d_backward(gp, arg, s, s),
        }
        label = f"{n}x{ci}->{co} {s}px"
        for name, call in cases.items():
            t_py = _median(lambda: call(_pykernels), repeats) * 1e3
            if ck is None:
                print(f"{name:<26}{label:<20}{t_py:>10.3f}{'-':>11}{'-':>9}")
                continue
            t_c = _median(lambda: call(ck), repeats) * 1e3
            print(f"{name:<26}{label:<20}{t_py:>10.3f}{t_c:>11.3f}{t_py / t_c:>8.2f}x")


_STEP = """
import statistics, timeit
import numpy as np
from prunemap.nn import kernels, reference_fcn
from prunemap.nn.model import backward
m = reference_fcn(seed=0)
x = np.random.default_rng(0).random((1, *m.input_shape)).astype(np.float32)
t = np.zeros((1, *m.input_shape[1:]), dtype=np.int64)
def step():
    backward(m, x, t)
step()
print(kernels.BACKEND, statistics.median(timeit.repeat(step, number=1, repeat={repeats})))
"""


def bench_model(repeats):
    # the backend is fixed at import, so each one gets a fresh interpreter
    print("\nreference FCN forward+backward, batch 1")
    for backend in ("python", "cython"):
        env = dict(os.environ, PRUNEMAP_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", _STEP.format(repeats=repeats)],
                             env=env, capture_output=True, text=True)
        if res.returncode != 0:
            print(f"  {backend:<8} unavailable")
            continue
        used, secs = res.stdout.split()
        print(f"  {used:<8} {float(secs) * 1e3:8.2f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20, help="timed calls per case (median reported)")
    args = ap.parse_args()
    bench_kernels(args.repeats)
    bench_model(args.repeats)


if __name__ == "__main__":
    main()

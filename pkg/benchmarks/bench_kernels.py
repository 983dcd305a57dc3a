"""Compare the compiled and pure-Python HMM kernels.

    python3 benchmarks/bench_kernels.py [--T 20000] [--chains 6] [--repeat 3]

Prints the best-of-N wall time per kernel and backend, the speedup, and the
largest difference between the two backends' outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dualnilm import _kernels_py as py

try:
    from dualnilm import _kernels as cy
except ImportError:  # extension not built
    cy = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def problems(T, K, seed=0):
    rng = np.random.default_rng(seed)
    trans = rng.dirichlet([4.0, 1.0], size=2)
    fb = (np.log(rng.dirichlet([1.0, 1.0])), np.log(trans), rng.normal(size=(T, 2)))
    ls = np.log(rng.dirichlet([1.0, 1.0], size=K))
    lt = np.log(np.stack([rng.dirichlet([4.0, 1.0], size=2) for _ in range(K)]))
    vit = (ls, lt, rng.normal(size=(T, 1 << K)))
    return fb, vit


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=20000)
    ap.add_argument("--chains", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    fb, vit = problems(args.T, args.chains)
    print(f"T={args.T} chains={args.chains} (joint states {1 << args.chains})")
    print(f"{'kernel':<18}{'python s':>10}{'cython s':>10}{'speedup':>9}{'max diff':>11}")
    for name, args_ in (("forward_backward", fb), ("factorial_viterbi", vit)):
        tp, op = best_of(lambda: getattr(py, name)(*args_), args.repeat)
        tc, oc = best_of(lambda: getattr(cy, name)(*args_), args.repeat)
        op = op if isinstance(op, tuple) else (op,)
        oc = oc if isinstance(oc, tuple) else (oc,)
        diff = max(float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float)))) for a, b in zip(op, oc))
        print(f"{name:<18}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x{diff:>11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

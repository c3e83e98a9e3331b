"""Time one ELAM group sweep with the compiled and the pure-numpy backend.

    python benchmarks/bench_sweep.py [--size 256] [--groups 32] [--repeat 5]
"""

import argparse
import time

import numpy as np

from flgsr import _kernels
from flgsr.elam import ElamConfig, ElamState, sweep_groups
from flgsr.grouping import make_partition
from flgsr.regularizer import CappedPhi


def make_state(n, groups, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n)) / np.sqrt(n)
    Y = rng.standard_normal((n, n)) / np.sqrt(n)
    C = rng.standard_normal((n, n))
    return ElamState(X, Y, C, np.zeros((n, n)), 1.0, make_partition(n, groups), 0.01)


def time_backend(backend, n, groups, repeat, seed=0):
    phi, cfg = CappedPhi(), ElamConfig()
    best = float("inf")
    state = None
    for _ in range(repeat):
        state = make_state(n, groups, seed)
        t0 = time.perf_counter()
        sweep_groups(state, phi, state.eta, cfg, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, state


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--groups", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    results = {}
    for backend in _kernels.available():
        results[backend] = time_backend(backend, args.size, args.groups, args.repeat)
        print(f"{backend:>8}: {results[backend][0] * 1e3:8.2f} ms per sweep "
              f"({args.size}x{args.size}, {args.groups} groups, best of {args.repeat})")
    if len(results) == 2:
        a, b = results["compiled"][1], results["python"][1]
        diff = max(np.abs(a.X - b.X).max(), np.abs(a.Y - b.Y).max())
        print(f" speedup: {results['python'][0] / results['compiled'][0]:.1f}x, max iterate difference {diff:.1e}")


if __name__ == "__main__":
    main()

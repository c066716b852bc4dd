"""Compare the numba and numpy walk backends on a few workloads.

    python benchmarks/bench_backends.py [--repeat 3] [--n 20000]

Each case is run once per backend to warm up (JIT compile, caches), then
timed ``--repeat`` times; the best wall time is reported together with the
largest end-position difference between the two backends.
"""
import argparse
import time

import numpy as np

from fkstable._backend import numba_available, use_backend
from fkstable.core_model import ModelSpec
from fkstable.montecarlo import run_walk

CASES = [
    ("d=1 alpha=0.5 psi=r", ModelSpec.power_law(1, 0.5, 1.0, 1.0), 0.5, 0.01),
    ("d=1 alpha=1.5 psi=r^2", ModelSpec.power_law(1, 1.5, 2.0, 1.0), 0.5, 0.01),
    ("d=2 alpha=1.2 psi=r^2", ModelSpec.power_law(2, 1.2, 2.0, 1.0), 0.5, 0.01),
]


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=20000)
    args = ap.parse_args()
    if not numba_available():
        raise SystemExit("numba is not importable; nothing to compare")

    print(f"{'case':26s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, model, t, dt in CASES:
        x0 = np.zeros(model.d)
        x0[0] = 0.5
        run = lambda: run_walk(model, x0, t, dt, args.n, 7)
        res = {}
        for backend in ("numba", "numpy"):
            with use_backend(backend):
                run()
                res[backend] = best_of(run, args.repeat)
        (tn, a), (tp, b) = res["numba"], res["numpy"]
        diff = float(np.max(np.abs(a.end_pos - b.end_pos)))
        print(f"{name:26s} {tn:10.3f} {tp:10.3f} {tp / tn:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()

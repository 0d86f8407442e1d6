"""Time the hot kernels under both backends.

    python3 benchmarks/bench_backends.py [--repeat 3] [--size small|medium]

The numba timings exclude compilation (one warm-up call first).
"""
import argparse
import time

import numpy as np

from svlab import _kernels
from svlab.poly import Polynomial4

SIZES = {"small": dict(n_pts=20_000, n_lines=400, n_thin=20_000, n_tubes=20, delta=1 / 16),
         "medium": dict(n_pts=200_000, n_lines=4000, n_thin=200_000, n_tubes=50, delta=1 / 32)}


def cases(cfg, rng):
    P = Polynomial4.parse("x1*x2 - x3*x4 + 0.1*x1**3")
    exps, C15, C5 = P.exps, P.bank[:15], P.bank[:5]
    X = rng.uniform(-1, 1, size=(cfg["n_pts"], 4))
    A = rng.uniform(-0.5, 0.5, size=(cfg["n_lines"], 4))
    D = rng.normal(size=(cfg["n_lines"], 4))
    D /= np.linalg.norm(D, axis=1)[:, None]
    ts = np.linspace(-1, 1, 64)
    T = rng.normal(size=(cfg["n_thin"], 4))
    T /= np.linalg.norm(T, axis=1)[:, None]
    M = rng.uniform(-0.3, 0.3, size=(cfg["n_tubes"], 4))
    V = rng.normal(size=(cfg["n_tubes"], 4))
    V /= np.linalg.norm(V, axis=1)[:, None]
    d = cfg["delta"]
    n_grid = int(np.ceil((2 + 2 * d) / (d / 2))) + 1
    return {
        "bank_eval": lambda: _kernels.bank_eval(X, exps, C15),
        "newton_project": lambda: _kernels.newton_project(X[:len(X) // 4], exps, C5, 1e-12, 50),
        "line_mask": lambda: _kernels.line_mask(A, D, ts, exps, C5, d, 1e-12, 50, 1e-4, 1.0),
        "greedy_thin": lambda: _kernels.greedy_thin(T, d, projective=True),
        "tube_voxels": lambda: _kernels.tube_voxels(M, V, d, d / 2, -1 - d, n_grid),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", choices=sorted(SIZES), default="small")
    args = ap.parse_args()
    cfg = SIZES[args.size]
    names = ["numba", "numpy"] if _kernels.HAS_NUMBA else ["numpy"]
    rows = {}
    for be in names:
        with _kernels.use_backend(be):
            for name, fn in cases(cfg, np.random.default_rng(0)).items():
                fn()  # warm-up / compile
                best = float("inf")
                for _ in range(args.repeat):
                    t0 = time.perf_counter()
                    fn()
                    best = min(best, time.perf_counter() - t0)
                rows.setdefault(name, {})[be] = best
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in names) + ("     speedup" if len(names) == 2 else ""))
    for name, r in rows.items():
        line = f"{name:<16}" + "".join(f"{r[b]:>11.4f}s" for b in names)
        if len(names) == 2:
            line += f"{r['numpy'] / r['numba']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()

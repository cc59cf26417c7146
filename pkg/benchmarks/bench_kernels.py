"""Time the numba and numpy paths of each hot kernel on representative sizes.

Run with ``python3 benchmarks/bench_kernels.py``. Each numba kernel is called
once before timing so compilation is excluded.
"""

import argparse
import timeit

import numpy as np

from reticle_switching import kernels


def cases(rng):
    n_pts, n_src = 2000, 961
    pts = rng.uniform(-1, 1, size=(2, n_pts))
    src = rng.uniform(-1, 1, size=(2, n_src))
    yield "displacement_matrix", (pts[0], pts[1], src[0], src[1], 0.05, 1.0)

    n = 17
    A = rng.normal(size=(n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + 0.1) * np.eye(n)
    B, C, D = rng.normal(size=(n, 2)), rng.normal(size=(3, n)), np.zeros((3, 2))
    yield "sigma_max_sweep", (A, B, C, D, np.logspace(-3, 3, 1000))

    M = 0.99 * np.linalg.qr(rng.normal(size=(n, n)))[0]
    yield "propagate", (M, rng.normal(size=(n, 2)), np.zeros(n), rng.normal(size=(20000, 2)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max diff':>11}")
    for name, inputs in cases(rng):
        fast, slow = getattr(kernels, f"{name}_numba"), getattr(kernels, f"{name}_numpy")
        diff = float(np.max(np.abs(fast(*inputs) - slow(*inputs))))
        t_fast = min(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_fast:>10.2f}{t_slow:>10.2f}{t_slow / t_fast:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()

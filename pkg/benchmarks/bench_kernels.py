"""Time each kernel under numba and under the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Inputs mirror
report-sized workloads: 16x16 grids, 3000 replicates, 80-step trajectories.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from escape4d import _kernels as K


def workloads(rng: np.random.Generator) -> dict[str, tuple]:
    P, Q = rng.random((81, 2)) * 10, rng.random((81, 2)) * 10
    dist = np.hypot(P[:, None, 0] - Q[None, :, 0], P[:, None, 1] - Q[None, :, 1])
    grids = rng.dirichlet(np.ones(256), 22)
    a, b = grids[:11], grids[11:]
    idx22 = rng.permuted(np.tile(np.arange(22), (3000, 1)), axis=1)
    pooled = rng.normal(size=60)
    idx60 = rng.permuted(np.tile(np.arange(60), (5000, 1)), axis=1)
    signs = np.where(rng.random((3000, 11)) < 0.5, -1.0, 1.0)
    pts = rng.random((30, 2))
    X = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    yu = rng.random(30 * 29 // 2)
    perms = rng.permuted(np.tile(np.arange(30), (3000, 1)), axis=1)
    return {
        "frechet_dp": (dist,),
        "perm_mean_diff": (pooled, 30, idx60),
        "group_perm": (grids, 11, idx22, K.JSD),
        "sign_flip": (a - b, 0.5 * (a + b).mean(axis=0), signs, K.JSD),
        "mantel_perm": (X, yu - yu.mean(), perms),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy fallback can be timed")
    inputs = workloads(np.random.default_rng(0))
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call_args in inputs.items():
        times = {}
        for backend in ("numpy", "numba") if K.HAVE_NUMBA else ("numpy",):
            fn = K.IMPLEMENTATIONS[backend][name]
            fn(*call_args)  # compile / warm caches
            times[backend] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat)) * 1e3
        nb = times.get("numba")
        speed = f"{times['numpy'] / nb:>9.1f}x" if nb else f"{'-':>10}"
        print(f"{name:<16}{times['numpy']:>12.2f}{(nb or float('nan')):>12.2f}{speed}")


if __name__ == "__main__":
    main()

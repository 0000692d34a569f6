"""Timing comparison of the numba and numpy kernel backends.

Runs every hot kernel on production-sized inputs with both implementations
(when numba is importable) and prints a table. Usage::

    python benchmarks/bench_kernels.py

Force the package itself onto a backend with MILLOPT_NUMBA=0|1; this script
always times both code paths directly.
"""

import time

import numpy as np

from millopt import _kernels


def timeit(fn, *args, repeat=5):
    fn(*args)  # warm (JIT compile / cache touch)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    cases = []

    # density-filter stencil on the 2D cantilever grid (200x100, r = 3h)
    field2 = rng.random((100, 200))
    kern2 = rng.random((7, 7))
    cases.append(("convolve 2d 200x100 k7", field2, kern2, "conv"))

    # PDE-free 3D stencil (48x24x24, r ~ 1.5h)
    field3 = rng.random((24, 24, 48))
    kern3 = rng.random((3, 3, 3))
    cases.append(("convolve 3d 48x24x24 k3", field3, kern3, "conv"))

    # machinability sweep over the 2D grid
    vals = rng.random((200, 100))
    passive = rng.random((200, 100)) < 0.02
    cases.append(("sweep 200x100", vals, passive, "sweep"))

    # per-element strain energies, 2D cantilever sized
    u = rng.standard_normal(2 * 201 * 101)
    edof = rng.integers(0, u.size, size=(20000, 8)).astype(np.int64)
    k0 = rng.standard_normal((8, 8))
    cases.append(("element energies 20k x 8dof", (u, edof, k0), None, "energy"))

    print(f"{'kernel':32s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name, a, b, kind in cases:
        if kind == "conv":
            t_np = timeit(_kernels._convolve_numpy, a, b)
            t_nb = (timeit(_kernels._convolve_numba, a, b)
                    if _kernels.HAVE_NUMBA else np.nan)
        elif kind == "sweep":
            t_np = timeit(_kernels._sweep_numpy, a, b, 0.7)
            t_nb = (timeit(_kernels._sweep_numba, a, b, 0.7)
                    if _kernels.HAVE_NUMBA else np.nan)
        else:
            u, edof, k0 = a
            t_np = timeit(_kernels._element_energies_numpy, u, edof, k0)
            t_nb = (timeit(_kernels._element_energies_numba, u, edof, k0)
                    if _kernels.HAVE_NUMBA else np.nan)
        speed = t_np / t_nb if np.isfinite(t_nb) else np.nan
        print(f"{name:32s} {t_np * 1e3:10.3f}ms {t_nb * 1e3:10.3f}ms {speed:8.2f}x")
    print(f"\nactive package backend: {_kernels.BACKEND}")


if __name__ == "__main__":
    main()

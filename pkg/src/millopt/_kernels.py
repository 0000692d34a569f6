"""Hot numeric kernels with a numba fast path and a numpy/scipy fallback.

The backend is chosen once at import time from the ``MILLOPT_NUMBA``
environment variable: ``"0"`` forces the pure numpy/scipy implementations,
anything else (or unset) uses numba when it is importable. Both paths
produce identical results up to floating-point round-off; see
``benchmarks/bench_kernels.py`` for a timing comparison.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MILLOPT_NUMBA", "1") != "0"
BACKEND = "numba" if USE_NUMBA else "numpy"


def set_num_threads(n: int) -> None:
    """Cap the numba thread pool (no-op on the numpy backend)."""
    if HAVE_NUMBA and n >= 1:
        numba.set_num_threads(n)


# ---------------------------------------------------------------------------
# Stencil convolution (density filter): zero padding outside the domain,
# the caller renormalizes with a precomputed weight-sum field.
# ---------------------------------------------------------------------------

def _convolve_numpy(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # correlate, not convolve: the loop kernels do not flip the stencil
    # (the production hat stencils are symmetric either way)
    return ndimage.correlate(field, kernel, mode="constant", cval=0.0)


if HAVE_NUMBA:
    from numba import prange

    # parallel over output rows; every output cell is written by exactly
    # one thread, so results stay bitwise deterministic

    @njit(cache=True, parallel=True)
    def _convolve_2d_numba(field, kernel):
        ny, nx = field.shape
        ky, kx = kernel.shape
        ry, rx = ky // 2, kx // 2
        out = np.zeros_like(field)
        for j in prange(ny):
            for i in range(nx):
                acc = 0.0
                for b in range(ky):
                    jj = j + b - ry
                    if jj < 0 or jj >= ny:
                        continue
                    for a in range(kx):
                        ii = i + a - rx
                        if ii < 0 or ii >= nx:
                            continue
                        acc += kernel[b, a] * field[jj, ii]
                out[j, i] = acc
        return out

    @njit(cache=True, parallel=True)
    def _convolve_3d_numba(field, kernel):
        nz, ny, nx = field.shape
        kz, ky, kx = kernel.shape
        rz, ry, rx = kz // 2, ky // 2, kx // 2
        out = np.zeros_like(field)
        for k in prange(nz):
            for j in range(ny):
                for i in range(nx):
                    acc = 0.0
                    for c in range(kz):
                        kk = k + c - rz
                        if kk < 0 or kk >= nz:
                            continue
                        for b in range(ky):
                            jj = j + b - ry
                            if jj < 0 or jj >= ny:
                                continue
                            for a in range(kx):
                                ii = i + a - rx
                                if ii < 0 or ii >= nx:
                                    continue
                                acc += kernel[c, b, a] * field[kk, jj, ii]
                    out[k, j, i] = acc
        return out


def _convolve_numba(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if field.ndim == 2:
        return _convolve_2d_numba(field, kernel)
    return _convolve_3d_numba(field, kernel)


def stencil_convolve(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Dense stencil convolution with zero boundary padding."""
    field = np.ascontiguousarray(field, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if USE_NUMBA:
        return _convolve_numba(field, kernel)
    return _convolve_numpy(field, kernel)


# ---------------------------------------------------------------------------
# Directed accumulation sweep (cumulative-sum shadow oracle). Works on a
# (n_along, n_perp) view of the field; passive cells reset the running sum
# to exactly 1 (the imposed solid value).
# ---------------------------------------------------------------------------

def _sweep_numpy(values2, passive2, increment):
    n_along, n_perp = values2.shape
    out = np.empty_like(values2)
    carry = np.zeros(n_perp)
    for i in range(n_along):
        carry = np.where(passive2[i], 1.0, carry + increment * values2[i])
        out[i] = carry
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _sweep_numba(values2, passive2, increment):
        n_along, n_perp = values2.shape
        out = np.empty_like(values2)
        for j in range(n_perp):
            carry = 0.0
            for i in range(n_along):
                if passive2[i, j]:
                    carry = 1.0
                else:
                    carry = carry + increment * values2[i, j]
                out[i, j] = carry
        return out


def directed_sweep(values2: np.ndarray, passive2: np.ndarray, increment: float) -> np.ndarray:
    """Running sum down axis 0 of a 2-d view, reset to 1.0 at passive cells."""
    values2 = np.ascontiguousarray(values2, dtype=np.float64)
    passive2 = np.ascontiguousarray(passive2, dtype=np.bool_)
    if USE_NUMBA:
        return _sweep_numba(values2, passive2, float(increment))
    return _sweep_numpy(values2, passive2, float(increment))


# ---------------------------------------------------------------------------
# Per-element strain-energy-like quadratic forms u_e^T k0 u_e, used by the
# compliance sensitivity every design iteration.
# ---------------------------------------------------------------------------

def _element_energies_numpy(u, edofmat, k0):
    ue = u[edofmat]
    return np.einsum("ea,ab,eb->e", ue, k0, ue)


if HAVE_NUMBA:

    @njit(cache=True)
    def _element_energies_numba(u, edofmat, k0):
        n_el, n_dof = edofmat.shape
        out = np.empty(n_el)
        for e in range(n_el):
            acc = 0.0
            for a in range(n_dof):
                ua = u[edofmat[e, a]]
                row = 0.0
                for b in range(n_dof):
                    row += k0[a, b] * u[edofmat[e, b]]
                acc += ua * row
            out[e] = acc
        return out


def element_energies(u: np.ndarray, edofmat: np.ndarray, k0: np.ndarray) -> np.ndarray:
    """Quadratic form of each element's dofs against a shared local matrix."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    edofmat = np.ascontiguousarray(edofmat, dtype=np.int64)
    k0 = np.ascontiguousarray(k0, dtype=np.float64)
    if USE_NUMBA:
        return _element_energies_numba(u, edofmat, k0)
    return _element_energies_numpy(u, edofmat, k0)


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    f2 = np.ones((3, 3))
    stencil_convolve(f2, np.ones((3, 3)))
    stencil_convolve(np.ones((3, 3, 3)), np.ones((3, 3, 3)))
    directed_sweep(f2, np.zeros((3, 3), dtype=bool), 1.0)
    element_energies(np.ones(8), np.zeros((2, 4), dtype=np.int64), np.eye(4))

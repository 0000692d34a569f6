"""Independent reference implementations used to verify the pipeline.

These deliberately avoid the production code paths: the shadow sweep is a
running sum along grid lines (the pure-advection limit), the dense FEA
oracle assembles and factorizes the full stiffness matrix, and the
finite-difference harness probes any scalar function directly. They ship
with the library because the machinability report reuses the sweep.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .fem import FemModel, LoadCase, MaterialConfig, simp_modulus
from .grid import StructuredGrid


def _axis_of_direction(direction: np.ndarray):
    """Return (axis, sign) for an axis-aligned unit vector, else raise."""
    u = np.asarray(direction, dtype=float)
    axis = int(np.argmax(np.abs(u)))
    sign = 1.0 if u[axis] > 0 else -1.0
    aligned = np.zeros_like(u)
    aligned[axis] = sign
    if not np.allclose(u, aligned, atol=1e-12):
        raise ValueError(f"sweep oracle requires an axis-aligned direction, got {u}")
    return axis, int(sign)


def oracle_cumsum_shadow(grid: StructuredGrid, direction, rho_tilde_full,
                         s: float | None = None,
                         source_factor: float = 1.0) -> np.ndarray:
    """Cumulative-sum shadow along an axis-aligned direction.

    Per grid line in flow order: ``c_i = c_{i-1} + f * s * h * rho_i`` with
    zero inflow at free boundaries; passive cells reset the running value to
    the imposed solid value 1. This is exactly the pure-advection upwind
    limit of the shadow solve.
    """
    axis, sign = _axis_of_direction(
        direction.vector if hasattr(direction, "vector") else direction)
    if s is None:
        s = 1.0 / grid.h
    increment = source_factor * s * grid.h
    arr = grid.to_array(np.asarray(rho_tilde_full, dtype=float))
    passive = grid.to_array(grid.passive_solid)
    # numpy axis for grid axis a is (dim - 1 - a); put it first, flatten rest
    np_axis = grid.dim - 1 - axis
    moved = np.moveaxis(arr, np_axis, 0)
    moved_p = np.moveaxis(passive, np_axis, 0)
    if sign < 0:
        moved = moved[::-1]
        moved_p = moved_p[::-1]
    shape = moved.shape
    swept = _kernels.directed_sweep(moved.reshape(shape[0], -1),
                                    moved_p.reshape(shape[0], -1), increment)
    swept = swept.reshape(shape)
    if sign < 0:
        swept = swept[::-1]
    return grid.from_array(np.moveaxis(swept, 0, np_axis))


def fd_gradient(func, x, step: float, components=None) -> np.ndarray:
    """Central finite differences of a scalar function.

    Parameters
    ----------
    func : callable
        Deterministic scalar function of a 1-d array.
    x : array
        Evaluation point (not modified).
    step : float
        Central-difference step, > 0.
    components : sequence of int, optional
        Indices to probe; defaults to all of them.
    """
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    x = np.asarray(x, dtype=float)
    if components is None:
        components = range(x.size)
    grad = np.zeros(len(list(components)))
    components = list(components)
    for k, i in enumerate(components):
        xp = x.copy()
        xp[i] += step
        fp = func(xp)
        xm = x.copy()
        xm[i] -= step
        fm = func(xm)
        grad[k] = (fp - fm) / (2.0 * step)
    return grad


def fd_step_scan(func, x, component: int, steps=(1e-5, 1e-6, 1e-7)) -> dict:
    """Diagnostic: the same central difference at several step sizes."""
    return {step: float(fd_gradient(func, x, step, [component])[0])
            for step in steps}


def dense_fea_compliance(grid: StructuredGrid, material: MaterialConfig,
                         loadcase: LoadCase, rho_phys_full) -> float:
    """Dense-assembly, dense-factorization compliance for small grids."""
    if grid.n_elements > 500:
        raise ValueError("dense FEA oracle is limited to grids of <= 500 elements")
    model = FemModel(grid, material, loadcase)
    rho = np.where(grid.passive_solid, 1.0, np.asarray(rho_phys_full, dtype=float))
    E = simp_modulus(rho, material)
    n_dof = grid.dim * grid.n_nodes
    K = np.zeros((n_dof, n_dof))
    for e in range(grid.n_elements):
        dofs = model.edofmat[e]
        K[np.ix_(dofs, dofs)] += E[e] * model.k0
    free = model.free
    u = np.zeros(n_dof)
    u[free] = np.linalg.solve(K[np.ix_(free, free)], model.f[free])
    return float(model.f @ u)

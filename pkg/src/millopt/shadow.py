"""Upwind finite-volume advection-diffusion shadowing per tool direction.

For each milling direction ``u`` (unit advection vector pointing from the
tool entry face into the domain) the steady transport equation

    u . grad(v) - (1/Pe) lap(v) = s * rho_tilde        in the design domain

is discretized on the element grid and solved for the shadow field ``v``.
Material upstream accumulates downstream, so thresholding ``v`` only allows
void where a straight tool path from outside stays in void.

Discretization, per control-volume face with outward flux F = A . u and
diffusion coefficient D = |A| / (Pe h):

* interior design-design faces: upwind advective value (taken from the cell
  the flow comes from) plus central-difference diffusion;
* free (Robin) boundary faces: the zero-inflow boundary condition
  ``v + (1/(s Pe)) dv/dn = 0`` is eliminated through a mirrored ghost value
  ``v_ghost = r_g v_P``; inflow faces advect the interpolated face value
  (which tends to 0 as s*Pe grows), outflow faces advect the upwind cell
  value so downstream transport leaves the domain freely;
* interfaces to passive solids: Dirichlet face value 1, eliminated through
  the ghost ``v_ghost = 2 - v_P``; the constant right-hand-side correction
  is ``-2 a_f`` with ``a_f`` the face's neighbor coefficient.

The assembled matrix is design-invariant, so its factorization is built
once and reused for every forward and transposed solve of the run.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import DIRICHLET_SOLID, INTERIOR, ROBIN, StructuredGrid, classify_boundary_faces
from .solvers import OperatorSolver


@dataclass(frozen=True)
class ToolDirection:
    """Unit advection vector for one milling direction."""

    u: tuple

    def __init__(self, u):
        vec = np.asarray(u, dtype=float)
        if vec.ndim != 1 or vec.size not in (2, 3) or not np.all(np.isfinite(vec)):
            raise ValueError(f"tool direction must be a finite 2- or 3-vector, got {u!r}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError("tool direction must be nonzero")
        object.__setattr__(self, "u", tuple(vec / norm))

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.u)

    @staticmethod
    def from_angle_deg(theta: float) -> "ToolDirection":
        """2D direction from a milling angle in degrees.

        ``theta`` is the direction the tool comes *from*: the entry face lies
        toward (cos theta, sin theta) and the advection vector points the
        opposite way, into the domain. theta = 0 mills from the right face,
        theta = -90 from below, theta = 180 from the left.
        """
        rad = np.deg2rad(theta)
        return ToolDirection((-np.cos(rad), -np.sin(rad)))


@dataclass
class ShadowConfig:
    """Peclet number, source scaling, and the set of tool directions."""

    peclet: float = 1e4
    directions: tuple = ()
    source_factor: float = 1.0
    source_scale: float | None = None  # 1/h on uniform grids; derived if None

    def __post_init__(self):
        if not np.isfinite(self.peclet) or self.peclet <= 0:
            raise ValueError(f"Peclet number must be positive, got {self.peclet}")
        if self.source_factor <= 0:
            raise ValueError("source factor must be positive")
        self.directions = tuple(
            d if isinstance(d, ToolDirection) else ToolDirection(d)
            for d in self.directions)

    def validate_for_grid(self, grid: StructuredGrid) -> None:
        l_c = max(grid.domain_lengths)
        if self.peclet * l_c <= 1e3:
            warnings.warn(
                f"Pe * l_c = {self.peclet * l_c:.3g} <= 1e3; shadows may be "
                "too diffuse for sharp milling constraints", stacklevel=2)
        if self.source_scale is not None:
            expected = 1.0 / grid.h
            if not np.isclose(self.source_scale, expected, rtol=1e-12):
                raise ValueError(
                    f"source_scale must equal 1/h = {expected} on uniform grids")


def peclet_rule_of_thumb(l_c: float) -> float:
    """Default Peclet number for a domain of characteristic length l_c."""
    return 1e4 / l_c


class ShadowOperator:
    """Assembled FV operator for one direction, with cached factorization."""

    def __init__(self, grid, direction, matrix, rhs_dirichlet, source_scale,
                 source_factor, peclet):
        self.grid = grid
        self.direction = direction
        self.matrix = matrix
        self.rhs_dirichlet = rhs_dirichlet
        self.source_scale = source_scale
        self.source_factor = source_factor
        self.peclet = peclet
        self.active_index = np.flatnonzero(grid.design_mask)
        self.solver = OperatorSolver(matrix)
        self.n_forward = 0
        self.n_adjoint = 0

    @property
    def n_active(self) -> int:
        return self.matrix.shape[0]


def robin_ghost_ratio(source_scale: float, peclet: float, h: float) -> float:
    """Mirror-ghost factor eliminating the free-boundary condition.

    Tends to -1 as s*Pe grows, which drives the interpolated boundary face
    value (1 + r_g)/2 to zero: nothing flows in through free boundaries.
    """
    beta = 1.0 / (source_scale * peclet * h)
    return (beta - 0.5) / (beta + 0.5)


def assemble_shadow_operator(grid: StructuredGrid, direction: ToolDirection,
                             config: ShadowConfig) -> ShadowOperator:
    """Build the sparse operator and Dirichlet right-hand side for one tool.

    Row structure touches only face neighbors (<= 2*dim + 1 nonzeros per
    row) and every diagonal entry is strictly positive. The matrix and
    ``rhs_dirichlet`` do not depend on the design, only on grid and
    direction, so they are assembled exactly once per run.
    """
    if not isinstance(direction, ToolDirection):
        direction = ToolDirection(direction)
    u = direction.vector
    if u.size != grid.dim:
        raise ValueError(f"direction has {u.size} components for a {grid.dim}D grid")
    config.validate_for_grid(grid)

    s = config.source_scale if config.source_scale is not None else 1.0 / grid.h
    pe = config.peclet
    h = grid.h
    faces = grid.faces
    kinds = classify_boundary_faces(grid)

    n_full = grid.n_elements
    active_of_full = -np.ones(n_full, dtype=np.int64)
    active_index = np.flatnonzero(grid.design_mask)
    active_of_full[active_index] = np.arange(active_index.size)
    n_active = active_index.size

    area = np.linalg.norm(faces.area_vector, axis=1)
    if np.any(area <= 0):
        raise ValueError("zero-area face encountered")
    flux = faces.area_vector @ u             # outward advective flux from owner
    diff = area / (pe * h)                   # CDS diffusion coefficient
    r_g = robin_ghost_ratio(s, pe, h)
    phi = 0.5 * (1.0 + r_g)                  # interpolated boundary face value factor

    rows, cols, vals = [], [], []
    rhs = np.zeros(n_active)
    diag = np.zeros(n_active)

    def add_diag(rows_active, contribution):
        np.add.at(diag, rows_active, contribution)

    # interior design-design faces: both orientations
    mask = kinds == INTERIOR
    o = active_of_full[faces.owner[mask]]
    n = active_of_full[faces.neighbor[mask]]
    fa = flux[mask]
    d = diff[mask]
    add_diag(o, np.maximum(fa, 0.0) + d)
    rows.append(o); cols.append(n); vals.append(np.minimum(fa, 0.0) - d)
    add_diag(n, np.maximum(-fa, 0.0) + d)
    rows.append(n); cols.append(o); vals.append(np.minimum(-fa, 0.0) - d)

    # free boundaries (Robin), owner always a design element
    mask = (kinds == ROBIN)
    o = active_of_full[faces.owner[mask]]
    fa = flux[mask]
    d = diff[mask]
    inflow = fa < 0.0
    adv = np.where(inflow, fa * phi, fa)
    add_diag(o, adv + d * (1.0 - r_g))

    # passive interfaces (Dirichlet value 1), handle each orientation
    mask = (kinds == DIRICHLET_SOLID) & ~faces.is_boundary
    for active_cells, fa in (
            (faces.owner[mask], flux[mask]),
            (faces.neighbor[mask], -flux[mask])):
        sel = grid.design_mask[active_cells]
        cells = active_of_full[active_cells[sel]]
        fa_s = fa[sel]
        d_s = diff[mask][sel]
        outflow = fa_s >= 0.0
        add_diag(cells, np.where(outflow, fa_s, 0.0) + 2.0 * d_s)
        np.add.at(rhs, cells, np.where(outflow, 0.0, -fa_s) + 2.0 * d_s)

    rows.append(np.arange(n_active)); cols.append(np.arange(n_active)); vals.append(diag)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_active, n_active)).tocsr()
    A.sum_duplicates()
    if np.any(A.diagonal() <= 0.0):
        raise RuntimeError("shadow operator assembled with a non-positive diagonal")
    return ShadowOperator(grid, direction, A, rhs, s, config.source_factor, pe)


def shadow_forward(op: ShadowOperator, rho_tilde_full: np.ndarray) -> np.ndarray:
    """Solve one shadowing step; returns the full-grid shadow field.

    The source is ``f * s * rho_tilde * h^dim`` over design elements plus
    the constant Dirichlet correction. Passive elements are reported as 1.
    Values well above 1 are expected downstream of material.
    """
    rho_tilde_full = np.asarray(rho_tilde_full, dtype=float)
    grid = op.grid
    src = rho_tilde_full[op.active_index]
    rhs = op.source_factor * op.source_scale * grid.element_volume * src + op.rhs_dirichlet
    op.n_forward += 1
    x = op.solver.solve(rhs)
    return grid.expand_design(x, passive_value=1.0)


def shadow_adjoint(op: ShadowOperator, g_full: np.ndarray) -> np.ndarray:
    """Transpose solve: sensitivity w.r.t. the regularized field.

    ``g_full`` holds d(objective)/d(shadow); entries at passive elements are
    ignored since they never enter the system. Returns a full-grid array
    with zeros at passive elements (the exact matrix transpose is used, so
    <A x, y> == <x, A^T y> to round-off).
    """
    g_full = np.asarray(g_full, dtype=float)
    g = g_full[op.active_index]
    if not np.all(np.isfinite(g)):
        raise ValueError("shadow adjoint input contains non-finite entries")
    op.n_adjoint += 1
    lam = op.solver.solve_transpose(g)
    grid = op.grid
    out = lam * (op.source_factor * op.source_scale * grid.element_volume)
    return grid.expand_design(out, passive_value=0.0)

"""SIMP linear elasticity on the structured grid: state solve, compliance,
its density sensitivity, and the scaled volume constraint.

Elements are bilinear quads (2D, plane stress) or trilinear hexes (3D) with
full Gauss quadrature. The unit-modulus element stiffness ``k0`` is computed
once; the assembled matrix scales each element copy by the SIMP-interpolated
Young's modulus. Supports are eliminated by row/column removal so the
reduced system stays symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .grid import StructuredGrid
from .solvers import SolverConvergenceError, relative_residual

FEM_DIRECT_LIMIT = 50_000  # free dofs; beyond this use AMG-preconditioned CG
FEM_RTOL = 1e-8


@dataclass(frozen=True)
class MaterialConfig:
    """SIMP interpolation between the void and solid Young's moduli."""

    e_max: float = 1.0
    e_min: float = 1e-9
    nu: float = 0.3
    simp_p: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.e_min < self.e_max:
            raise ValueError(f"need 0 < e_min < e_max, got {self.e_min}, {self.e_max}")
        if not 0.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {self.nu}")
        if self.simp_p < 1.0:
            raise ValueError(f"SIMP exponent must be >= 1, got {self.simp_p}")

    def with_e_min(self, e_min: float) -> "MaterialConfig":
        return replace(self, e_min=e_min)


@dataclass(frozen=True)
class NodeSelector:
    """Axis-aligned node selection: fix any subset of coordinates.

    ``axes`` maps axis index to coordinate value; a node matches when every
    listed coordinate agrees to within half an element. An empty mapping
    selects every node.
    """

    axes: tuple  # ((axis, value), ...)

    @staticmethod
    def at(**coords) -> "NodeSelector":
        order = {"x": 0, "y": 1, "z": 2}
        return NodeSelector(tuple(sorted((order[k], float(v)) for k, v in coords.items())))

    def select(self, grid: StructuredGrid) -> np.ndarray:
        coords = grid.node_coords()
        mask = np.ones(coords.shape[0], dtype=bool)
        for axis, value in self.axes:
            if axis >= grid.dim:
                raise ValueError(f"selector axis {axis} invalid for a {grid.dim}D grid")
            mask &= np.abs(coords[:, axis] - value) < 0.5 * grid.h
        ids = np.flatnonzero(mask)
        if ids.size == 0:
            raise ValueError(f"node selector {self.axes} matches no nodes")
        return ids


@dataclass(frozen=True)
class LoadCase:
    """Fully-fixed supports plus (selection, total force vector) loads."""

    supports: tuple
    loads: tuple

    def __post_init__(self):
        if len(self.supports) == 0:
            raise ValueError("at least one support is required")
        if len(self.loads) == 0:
            raise ValueError("at least one load is required")
        for _, f in self.loads:
            if not np.any(np.asarray(f, dtype=float)):
                raise ValueError("load force vector must be nonzero")


@dataclass
class StateSolution:
    u: np.ndarray
    compliance: float
    residual: float
    iterations: int = 1


def simp_modulus(rho, material: MaterialConfig):
    """E(rho) = e_min + rho^p (e_max - e_min), monotone on [0, 1]."""
    rho = np.asarray(rho, dtype=float)
    return material.e_min + rho ** material.simp_p * (material.e_max - material.e_min)


def _gauss_points(dim):
    g = 1.0 / np.sqrt(3.0)
    pts_1d = (-g, g)
    if dim == 2:
        return [(a, b) for b in pts_1d for a in pts_1d]
    return [(a, b, c) for c in pts_1d for b in pts_1d for a in pts_1d]


_REF_NODES_2D = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float)
_REF_NODES_3D = np.array([(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
                          (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)], dtype=float)


def element_stiffness(dim: int, h: float, nu: float) -> np.ndarray:
    """Unit-modulus element stiffness (8x8 quad or 24x24 hex)."""
    ref = _REF_NODES_2D if dim == 2 else _REF_NODES_3D
    n_nodes = ref.shape[0]
    if dim == 2:
        D = np.array([[1.0, nu, 0.0],
                      [nu, 1.0, 0.0],
                      [0.0, 0.0, (1.0 - nu) / 2.0]]) / (1.0 - nu ** 2)
    else:
        c = 1.0 / ((1.0 + nu) * (1.0 - 2.0 * nu))
        D = np.zeros((6, 6))
        D[:3, :3] = nu
        np.fill_diagonal(D[:3, :3], 1.0 - nu)
        D[3:, 3:] = np.eye(3) * (1.0 - 2.0 * nu) / 2.0
        D *= c
    k0 = np.zeros((dim * n_nodes, dim * n_nodes))
    detJ = (h / 2.0) ** dim
    for gp in _gauss_points(dim):
        dN = np.empty((n_nodes, dim))
        for a in range(n_nodes):
            for d in range(dim):
                term = ref[a, d] / 2.0 ** dim
                for o in range(dim):
                    if o != d:
                        term *= 1.0 + ref[a, o] * gp[o]
                dN[a, d] = term * (2.0 / h)  # reference-to-physical jacobian
        if dim == 2:
            B = np.zeros((3, 2 * n_nodes))
            B[0, 0::2] = dN[:, 0]
            B[1, 1::2] = dN[:, 1]
            B[2, 0::2] = dN[:, 1]
            B[2, 1::2] = dN[:, 0]
        else:
            B = np.zeros((6, 3 * n_nodes))
            B[0, 0::3] = dN[:, 0]
            B[1, 1::3] = dN[:, 1]
            B[2, 2::3] = dN[:, 2]
            B[3, 0::3] = dN[:, 1]
            B[3, 1::3] = dN[:, 0]
            B[4, 1::3] = dN[:, 2]
            B[4, 2::3] = dN[:, 1]
            B[5, 0::3] = dN[:, 2]
            B[5, 2::3] = dN[:, 0]
        k0 += B.T @ D @ B * detJ
    return k0


def element_dof_map(grid: StructuredGrid) -> np.ndarray:
    """(n_elements, dim * nodes_per_element) global dof indices."""
    dim = grid.dim
    nx = grid.dims[0]
    sx = nx + 1
    if dim == 2:
        ny = grid.dims[1]
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        n0 = (i + sx * j).T.ravel()
        nodes = np.stack([n0, n0 + 1, n0 + 1 + sx, n0 + sx], axis=1)
    else:
        ny, nz = grid.dims[1], grid.dims[2]
        sxy = sx * (ny + 1)
        i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        n0 = (i + sx * j + sxy * k).transpose(2, 1, 0).ravel()
        base = np.stack([n0, n0 + 1, n0 + 1 + sx, n0 + sx], axis=1)
        nodes = np.concatenate([base, base + sxy], axis=1)
    dofs = dim * np.repeat(nodes, dim, axis=1) + np.tile(np.arange(dim), nodes.shape[1])
    return dofs.astype(np.int64)


class FemModel:
    """Grid- and load-bound elasticity model reused across design iterations."""

    def __init__(self, grid: StructuredGrid, material: MaterialConfig,
                 loadcase: LoadCase):
        self.grid = grid
        self.material = material
        self.loadcase = loadcase
        self.k0 = element_stiffness(grid.dim, grid.h, material.nu)
        self.edofmat = element_dof_map(grid)
        n_dof = grid.dim * grid.n_nodes

        fixed = np.zeros(n_dof, dtype=bool)
        for sel in loadcase.supports:
            nodes = sel.select(grid)
            for d in range(grid.dim):
                fixed[grid.dim * nodes + d] = True
        self.free = np.flatnonzero(~fixed)
        if self.free.size == 0:
            raise ValueError("all degrees of freedom are fixed")
        self._reduced = -np.ones(n_dof, dtype=np.int64)
        self._reduced[self.free] = np.arange(self.free.size)

        f = np.zeros(n_dof)
        for sel, force in loadcase.loads:
            nodes = sel.select(grid)
            force = np.asarray(force, dtype=float)
            if force.shape != (grid.dim,):
                raise ValueError("load force vector must match the grid dimension")
            for d in range(grid.dim):
                f[grid.dim * nodes + d] += force[d] / nodes.size
        self.f = f
        if not np.any(f[self.free]):
            raise ValueError("applied load acts only on fixed dofs")

        n_per = self.edofmat.shape[1]
        iK = np.repeat(self.edofmat, n_per, axis=1).ravel()
        jK = np.tile(self.edofmat, (1, n_per)).ravel()
        ri = self._reduced[iK]
        rj = self._reduced[jK]
        keep = (ri >= 0) & (rj >= 0)
        self._rows = ri[keep]
        self._cols = rj[keep]
        self._keep = keep

    def assemble(self, rho_phys_full: np.ndarray) -> sp.csr_matrix:
        rho = np.where(self.grid.passive_solid, 1.0, np.asarray(rho_phys_full, dtype=float))
        E = simp_modulus(rho, self.material)
        vals = (E[:, None, None] * self.k0).ravel()[self._keep]
        n = self.free.size
        K = sp.coo_matrix((vals, (self._rows, self._cols)), shape=(n, n)).tocsr()
        K.sum_duplicates()
        return K

    def solve(self, rho_phys_full: np.ndarray) -> StateSolution:
        """Assemble and solve the equilibrium system for one design."""
        K = self.assemble(rho_phys_full)
        b = self.f[self.free]
        n = self.free.size
        if n <= FEM_DIRECT_LIMIT:
            try:
                lu = spla.splu(K.tocsc())
                u_f = lu.solve(b)
                # fixed two refinement rounds: recovers the contract at high
                # contrast and keeps the solve a smooth function of the
                # design (an adaptive exit adds round-off noise that central
                # differences of the compliance would see)
                for _ in range(2):
                    u_f = u_f + lu.solve(b - K @ u_f)
            except RuntimeError as exc:  # singular factorization
                raise SolverConvergenceError(
                    f"elasticity factorization failed ({exc}); the system is "
                    "singular - check supports and the E_min continuation schedule")
            iterations = 1
        else:
            u_f, iterations = self._solve_amg(K, b)
        res = relative_residual(K, u_f, b)
        if not np.isfinite(res) or res > 10 * FEM_RTOL:
            raise SolverConvergenceError(
                f"elasticity residual {res:.3e} exceeds contract {FEM_RTOL:.1e}",
                residuals=[res])
        u = np.zeros(self.grid.dim * self.grid.n_nodes)
        u[self.free] = u_f
        compliance = float(self.f @ u)
        return StateSolution(u=u, compliance=compliance, residual=res,
                             iterations=iterations)

    def _solve_amg(self, K, b):
        import pyamg

        # rebuild per design: setup costs seconds while a hierarchy left
        # over from a materially different design can cost hundreds of CG
        # iterations during the early transient
        ml = pyamg.smoothed_aggregation_solver(K.tocsr(), B=self._rigid_modes(),
                                               max_coarse=500)
        count = {"n": 0}

        def cb(_):
            count["n"] += 1

        u_f, info = spla.cg(K, b, rtol=FEM_RTOL * 1e-1, atol=0.0,
                            M=ml.aspreconditioner(cycle="V"),
                            maxiter=2000, callback=cb)
        if info != 0:
            # retry once with a W-cycle on the same hierarchy
            u_f, info = spla.cg(K, b, rtol=FEM_RTOL * 1e-1, atol=0.0,
                                M=ml.aspreconditioner(cycle="W"),
                                maxiter=2000, callback=cb)
            if info != 0:
                raise SolverConvergenceError(
                    f"AMG-preconditioned CG stalled after {count['n']} iterations",
                    residuals=[relative_residual(K, u_f, b)])
        return u_f, count["n"]

    def _rigid_modes(self):
        coords = self.grid.node_coords()
        dim = self.grid.dim
        n_dof = dim * coords.shape[0]
        modes = [np.zeros(n_dof) for _ in range(3 if dim == 2 else 6)]
        for d in range(dim):
            modes[d][d::dim] = 1.0
        if dim == 2:
            modes[2][0::2] = -coords[:, 1]
            modes[2][1::2] = coords[:, 0]
        else:
            x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
            modes[3][1::3], modes[3][2::3] = -z, y
            modes[4][0::3], modes[4][2::3] = z, -x
            modes[5][0::3], modes[5][1::3] = -y, x
        return np.stack(modes, axis=1)[self.free]

    def compliance_sensitivity(self, state: StateSolution,
                               rho_phys_full: np.ndarray) -> np.ndarray:
        """d(compliance)/d(projected density) over design elements, all <= 0."""
        rho = np.asarray(rho_phys_full, dtype=float)
        energies = _kernels.element_energies(state.u, self.edofmat, self.k0)
        p = self.material.simp_p
        dE = p * rho ** (p - 1.0) * (self.material.e_max - self.material.e_min)
        return (-dE * energies)[self.grid.design_mask]


def solve_state(grid: StructuredGrid, material: MaterialConfig,
                loadcase: LoadCase, rho_phys_full: np.ndarray) -> StateSolution:
    """One-shot equilibrium solve (builds a throwaway model)."""
    return FemModel(grid, material, loadcase).solve(rho_phys_full)


def compliance_sensitivity(state: StateSolution, rho_phys_full, grid, material,
                           loadcase=None, model: FemModel | None = None):
    if model is None:
        model = FemModel(grid, material, loadcase)
    return model.compliance_sensitivity(state, rho_phys_full)


def volume_and_sensitivity(rho_phys_full: np.ndarray, grid: StructuredGrid,
                           v_star: float):
    """Scaled volume constraint g = V/(V* V_design) - 1 and its gradient.

    Only design elements count toward the volume; the gradient is the
    constant 1/(V* n_design) per design element.
    """
    if not 0.0 < v_star <= 1.0:
        raise ValueError(f"volume fraction must lie in (0, 1], got {v_star}")
    rho_d = np.asarray(rho_phys_full, dtype=float)[grid.design_mask]
    n_design = rho_d.size
    g = float(rho_d.sum() / (v_star * n_design) - 1.0)
    grad = np.full(n_design, 1.0 / (v_star * n_design))
    return g, grad

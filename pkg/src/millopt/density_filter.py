"""Design-field regularization: convolution and PDE density filters.

Both variants are linear, positivity preserving, and exactly adjointable.
The convolution filter (2D default) uses linear hat weights
``w = max(0, r_min - dist)`` with per-element renormalization of stencils
truncated at the boundary. The PDE variant (3D default) solves
``(-r^2 lap + I) rho_tilde = rho`` with zero-flux boundaries and
``r = r_min / (2 sqrt(3))`` so both target the same physical radius.

Passive-solid elements enter the filter input at density 1 (they shadow and
stiffen their surroundings); their sensitivities are discarded by the
adjoint restriction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .grid import StructuredGrid

CONVOLUTION = "convolution"
PDE_HELMHOLTZ = "pde"


@dataclass(frozen=True)
class FilterSpec:
    kind: str = CONVOLUTION
    r_min: float = 0.03

    def __post_init__(self):
        if self.kind not in (CONVOLUTION, PDE_HELMHOLTZ):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not np.isfinite(self.r_min) or self.r_min <= 0:
            raise ValueError(f"filter radius must be positive, got {self.r_min}")


def hat_kernel(grid: StructuredGrid, r_min: float) -> np.ndarray:
    """Linear hat-weight stencil on element centroids, shape dims[::-1]."""
    r_el = r_min / grid.h
    reach = int(np.ceil(r_el - 1e-12)) - 1
    reach = max(reach, 0)
    axes = [np.arange(-reach, reach + 1)] * grid.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    dist = np.sqrt(sum(m.astype(float) ** 2 for m in mesh)) * grid.h
    return np.maximum(0.0, r_min - dist)


class DensityFilter:
    """Stateful filter bound to one grid; apply/adjoint count as solves."""

    def __init__(self, spec: FilterSpec, grid: StructuredGrid):
        self.spec = spec
        self.grid = grid
        self.n_apply = 0
        self.n_adjoint = 0
        if spec.kind == CONVOLUTION:
            if spec.r_min / grid.h < 1.0 - 1e-12:
                raise ValueError(
                    f"convolution radius {spec.r_min} is below one element ({grid.h})")
            self._kernel = hat_kernel(grid, spec.r_min)
            ones = np.ones(grid.dims[::-1])
            self._weight_sum = _kernels.stencil_convolve(ones, self._kernel)
            self._lu = None
        else:
            r = spec.r_min / (2.0 * np.sqrt(3.0))
            A = _helmholtz_matrix(grid, r)
            self._lu = spla.splu(A.tocsc())
            self._kernel = None
            self._weight_sum = None

    # -- raw linear maps over full element fields --------------------------

    def apply_full(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field, dtype=float)
        if not np.all(np.isfinite(field)):
            raise ValueError("density filter input contains non-finite entries")
        self.n_apply += 1
        if self._kernel is not None:
            arr = self.grid.to_array(field)
            out = _kernels.stencil_convolve(arr, self._kernel) / self._weight_sum
            return self.grid.from_array(out)
        return self._lu.solve(field)

    def adjoint_full(self, g: np.ndarray) -> np.ndarray:
        """Apply the transposed filter map F^T to a full-grid sensitivity."""
        g = np.asarray(g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise ValueError("density filter adjoint input contains non-finite entries")
        self.n_adjoint += 1
        if self._kernel is not None:
            # F = D^-1 H with symmetric H: F^T g = H (g / weight_sum)
            arr = self.grid.to_array(g) / self._weight_sum
            out = _kernels.stencil_convolve(arr, self._kernel)
            return self.grid.from_array(out)
        return self._lu.solve(g)  # symmetric operator: F^T = F

    # -- design-vector views ------------------------------------------------

    def apply_design(self, rho_design: np.ndarray) -> np.ndarray:
        """Filter a design vector; passive elements contribute density 1."""
        full = self.grid.expand_design(np.asarray(rho_design, dtype=float),
                                       passive_value=1.0)
        return self.apply_full(full)

    def adjoint_design(self, g_full: np.ndarray) -> np.ndarray:
        """F^T restricted to design entries (passive sensitivities dropped)."""
        return self.grid.restrict_design(self.adjoint_full(g_full))


def _helmholtz_matrix(grid: StructuredGrid, r: float) -> sp.csr_matrix:
    """I + (r/h)^2 * graph Laplacian, i.e. zero-flux FV discretization."""
    faces = grid.faces
    interior = ~faces.is_boundary
    o = faces.owner[interior]
    n = faces.neighbor[interior]
    w = (r / grid.h) ** 2
    rows = np.concatenate([o, n, o, n])
    cols = np.concatenate([n, o, o, n])
    vals = np.concatenate([
        np.full(o.shape, -w), np.full(o.shape, -w),
        np.full(o.shape, w), np.full(o.shape, w)])
    A = sp.coo_matrix((vals, (rows, cols)),
                      shape=(grid.n_elements, grid.n_elements)).tocsr()
    return A + sp.identity(grid.n_elements, format="csr")


def make_density_filter(spec: FilterSpec, grid: StructuredGrid) -> DensityFilter:
    return DensityFilter(spec, grid)


def apply_density_filter(filt: DensityFilter, grid: StructuredGrid,
                         rho_design: np.ndarray) -> np.ndarray:
    """Functional wrapper: design vector in, full regularized field out."""
    return filt.apply_design(rho_design)


def density_filter_adjoint(filt: DensityFilter, grid: StructuredGrid,
                           g_full: np.ndarray) -> np.ndarray:
    return filt.adjoint_design(g_full)

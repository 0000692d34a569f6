"""Uniform structured grids with explicit face connectivity.

Elements are axis-aligned squares (2D) or cubes (3D) of side ``h``, ordered
lexicographically with x fastest. Faces are enumerated once, axis by axis,
so rebuilding the same grid always yields the identical ordering. The grid
is immutable after construction and safe to share between stages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Face classification codes.
INTERIOR = 0          # both adjacent elements belong to the design domain
ROBIN = 1             # free domain boundary
DIRICHLET_SOLID = 2   # interface to (or boundary of) a passive solid region
PASSIVE_INTERNAL = 3  # face touching no design element at all


@dataclass(frozen=True, eq=False)
class FaceTable:
    """Flat arrays describing every grid face exactly once.

    ``area_vector`` points outward from the owner and has magnitude
    h^(dim-1). ``centroid_offset`` runs from the owner centroid to the
    neighbor centroid, or to the face centroid for boundary faces.
    """

    owner: np.ndarray
    neighbor: np.ndarray
    area_vector: np.ndarray
    centroid_offset: np.ndarray

    def __len__(self) -> int:
        return self.owner.shape[0]

    @property
    def is_boundary(self) -> np.ndarray:
        return self.neighbor < 0


@dataclass(frozen=True, eq=False)
class StructuredGrid:
    """Axis-aligned uniform grid shared by all PDE and FEA stages."""

    dims: tuple
    h: float
    origin: tuple
    passive_solid: np.ndarray
    faces: FaceTable

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.dims))

    @property
    def element_volume(self) -> float:
        return self.h ** self.dim

    @property
    def domain_lengths(self) -> tuple:
        return tuple(n * self.h for n in self.dims)

    @property
    def design_mask(self) -> np.ndarray:
        return ~self.passive_solid

    @property
    def n_design(self) -> int:
        return int(np.count_nonzero(self.design_mask))

    @property
    def node_dims(self) -> tuple:
        return tuple(n + 1 for n in self.dims)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_dims))

    def element_centers(self) -> np.ndarray:
        """Centroid coordinates of all elements, shape (n_elements, dim)."""
        axes = [self.origin[a] + self.h * (np.arange(self.dims[a]) + 0.5)
                for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        # lexicographic order, x fastest
        return np.stack([m.T.ravel() if self.dim == 2 else m.transpose(2, 1, 0).ravel()
                         for m in mesh], axis=1)

    def node_coords(self) -> np.ndarray:
        axes = [self.origin[a] + self.h * np.arange(self.dims[a] + 1)
                for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.T.ravel() if self.dim == 2 else m.transpose(2, 1, 0).ravel()
                         for m in mesh], axis=1)

    def to_array(self, field: np.ndarray) -> np.ndarray:
        """Reshape a flat element field to (ny, nx) or (nz, ny, nx)."""
        return np.asarray(field).reshape(self.dims[::-1])

    def from_array(self, arr: np.ndarray) -> np.ndarray:
        return np.asarray(arr).reshape(-1)

    def expand_design(self, values: np.ndarray, passive_value: float = 1.0) -> np.ndarray:
        """Scatter a design-element vector onto the full grid."""
        full = np.full(self.n_elements, passive_value, dtype=float)
        full[self.design_mask] = values
        return full

    def restrict_design(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.design_mask]


def _build_faces(dims: Sequence[int], h: float) -> FaceTable:
    dim = len(dims)
    area = h ** (dim - 1)
    owners, neighbors, areas, offsets = [], [], [], []
    strides = [1]
    for a in range(1, dim):
        strides.append(strides[-1] * dims[a - 1])
    # perpendicular index grid per axis, lexicographic with the lowest
    # remaining axis fastest
    for a in range(dim):
        perp_axes = [b for b in range(dim) if b != a]
        perp_ranges = [np.arange(dims[b]) for b in perp_axes]
        if perp_ranges:
            mesh = np.meshgrid(*perp_ranges, indexing="ij")
            perp = np.stack([m.ravel(order="F") for m in mesh], axis=1)
        else:
            perp = np.zeros((1, 0), dtype=int)
        base = np.zeros(perp.shape[0], dtype=np.int64)
        for col, b in enumerate(perp_axes):
            base += perp[:, col] * strides[b]
        e_a = np.zeros(dim)
        e_a[a] = 1.0
        for layer in range(dims[a] + 1):
            if layer == 0:
                own = base
                owners.append(own)
                neighbors.append(np.full(own.shape, -1, dtype=np.int64))
                areas.append(np.tile(-e_a * area, (own.shape[0], 1)))
                offsets.append(np.tile(-e_a * (h / 2.0), (own.shape[0], 1)))
            elif layer == dims[a]:
                own = base + (dims[a] - 1) * strides[a]
                owners.append(own)
                neighbors.append(np.full(own.shape, -1, dtype=np.int64))
                areas.append(np.tile(e_a * area, (own.shape[0], 1)))
                offsets.append(np.tile(e_a * (h / 2.0), (own.shape[0], 1)))
            else:
                own = base + (layer - 1) * strides[a]
                owners.append(own)
                neighbors.append(own + strides[a])
                areas.append(np.tile(e_a * area, (own.shape[0], 1)))
                offsets.append(np.tile(e_a * h, (own.shape[0], 1)))
    return FaceTable(
        owner=np.concatenate(owners),
        neighbor=np.concatenate(neighbors),
        area_vector=np.vstack(areas),
        centroid_offset=np.vstack(offsets),
    )


def build_grid(dims, h, origin=None, passive_regions=()) -> StructuredGrid:
    """Construct a grid with optional axis-aligned passive-solid boxes.

    Parameters
    ----------
    dims : sequence of int
        Element counts per axis (2 or 3 entries), all >= 1.
    h : float
        Uniform element side length, > 0.
    origin : sequence of float, optional
        Lower corner of the domain; defaults to the zero vector.
    passive_regions : sequence of (lo, hi) pairs
        Axis-aligned boxes (domain coordinates) fixed at full density and
        excluded from the design vector. Boxes must lie inside the domain.

    Raises
    ------
    ValueError
        On non-positive dims or h, a passive box outside the domain, or a
        passive mask covering every element ("no design elements").
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) not in (2, 3):
        raise ValueError(f"expected 2 or 3 grid dimensions, got {len(dims)}")
    if any(n < 1 for n in dims):
        raise ValueError(f"element counts must be >= 1, got {dims}")
    h = float(h)
    if not np.isfinite(h) or h <= 0.0:
        raise ValueError(f"element side length must be positive, got {h}")
    if origin is None:
        origin = (0.0,) * len(dims)
    origin = tuple(float(x) for x in origin)
    if len(origin) != len(dims):
        raise ValueError("origin must match the grid dimension")

    lengths = tuple(n * h for n in dims)
    n_el = int(np.prod(dims))
    passive = np.zeros(n_el, dtype=bool)
    faces = _build_faces(dims, h)
    grid = StructuredGrid(dims=dims, h=h, origin=origin,
                          passive_solid=passive, faces=faces)
    if passive_regions:
        centers = grid.element_centers()
        tol = 1e-9 * max(lengths)
        for lo, hi in passive_regions:
            lo = np.asarray(lo, dtype=float)
            hi = np.asarray(hi, dtype=float)
            if lo.shape != (len(dims),) or hi.shape != (len(dims),):
                raise ValueError("passive box corners must match the grid dimension")
            if np.any(lo > hi):
                raise ValueError(f"passive box has lo > hi: {lo} > {hi}")
            if np.any(lo < np.asarray(origin) - tol) or \
                    np.any(hi > np.asarray(origin) + np.asarray(lengths) + tol):
                raise ValueError("passive box lies outside the domain")
            inside = np.all((centers >= lo - tol) & (centers <= hi + tol), axis=1)
            passive |= inside
        if passive.all():
            raise ValueError("no design elements: passive regions cover the whole domain")
    return grid


def classify_boundary_faces(grid: StructuredGrid) -> np.ndarray:
    """Classify every face of the grid for the shadow operator.

    Boundary faces owned by a design element are Robin; boundary faces of
    passive elements are DirichletSolid. Interior faces separating a design
    element from a passive one are reported as DirichletSolid interfaces;
    interior design-design faces are INTERIOR and faces touching only
    passive elements are PASSIVE_INTERNAL.
    """
    faces = grid.faces
    passive = grid.passive_solid
    kinds = np.empty(len(faces), dtype=np.int8)
    boundary = faces.is_boundary
    owner_passive = passive[faces.owner]
    kinds[boundary & ~owner_passive] = ROBIN
    kinds[boundary & owner_passive] = DIRICHLET_SOLID
    interior = ~boundary
    nb = faces.neighbor.copy()
    nb[boundary] = 0  # placeholder, masked out below
    neighbor_passive = passive[nb]
    both_active = interior & ~owner_passive & ~neighbor_passive
    both_passive = interior & owner_passive & neighbor_passive
    mixed = interior & (owner_passive ^ neighbor_passive)
    kinds[both_active] = INTERIOR
    kinds[both_passive] = PASSIVE_INTERNAL
    kinds[mixed] = DIRICHLET_SOLID
    return kinds

"""Voxel lattices, the voxel manifold, and refined evaluation grids.

A mask selects voxels from a regular lattice in 1 to 3 dimensions. The
voxel manifold is the closed union of the axis-aligned boxes centred on
the included voxels, each box with side lengths equal to the lattice
spacing. Fields are evaluated on refined grids that place (r + 1)
points per voxel along each axis; integration weights come from
clipping the grid cell around each point to the manifold.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mask",
    "FineGrid",
    "ManifoldSummary",
    "solid_mask",
    "build_voxel_manifold",
    "refine",
    "integration_weights",
]


@dataclass(frozen=True)
class Mask:
    """Inclusion map of a voxel lattice plus the per-axis spacing.

    Parameters
    ----------
    inclusion : ndarray of bool
        Shape gives the lattice dimensions, 1 to 3 axes. True marks an
        included voxel. Voxel (i_1, ..., i_D) is centred at
        (i_1 h_1, ..., i_D h_D).
    spacing : tuple of float
        Positive side length h_d of the voxel boxes along each axis.
    """

    inclusion: np.ndarray
    spacing: tuple[float, ...]

    def __post_init__(self) -> None:
        inc = np.ascontiguousarray(np.asarray(self.inclusion, dtype=bool))
        if inc.ndim not in (1, 2, 3):
            raise ValueError(f"mask must have 1 to 3 axes, got {inc.ndim}")
        if not inc.any():
            raise ValueError("empty domain")
        spacing = tuple(float(h) for h in self.spacing)
        if len(spacing) != inc.ndim:
            raise ValueError(
                f"spacing has {len(spacing)} entries for a {inc.ndim}-axis mask"
            )
        if any(not np.isfinite(h) or h <= 0.0 for h in spacing):
            raise ValueError(f"spacing must be positive and finite, got {spacing}")
        object.__setattr__(self, "inclusion", inc)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return self.inclusion.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.inclusion.shape

    @property
    def n_voxels(self) -> int:
        """Number of included voxels."""
        return int(self.inclusion.sum())

    def voxel_indices(self) -> np.ndarray:
        """Integer indices of included voxels in row-major order, (n, D)."""
        return np.argwhere(self.inclusion)

    def voxel_centers(self) -> np.ndarray:
        """Physical centre coordinates of included voxels, (n, D)."""
        return self.voxel_indices() * np.asarray(self.spacing)

    def full_from_included(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter per-included-voxel values onto the full lattice.

        `values` may have leading batch axes; the last axis must equal
        the number of included voxels.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.n_voxels:
            raise ValueError(
                f"expected {self.n_voxels} values per image, got {values.shape[-1]}"
            )
        out = np.full(values.shape[:-1] + self.dims, fill, dtype=float)
        out[..., self.inclusion] = values
        return out

    def included_from_full(self, full: np.ndarray) -> np.ndarray:
        """Gather included-voxel values from full lattice arrays."""
        full = np.asarray(full)
        if full.shape[-self.ndim:] != self.dims:
            raise ValueError(
                f"expected trailing shape {self.dims}, got {full.shape[-self.ndim:]}"
            )
        return full[..., self.inclusion]


def solid_mask(dims: tuple[int, ...] | list[int], spacing=None) -> Mask:
    """Fully included rectangular mask, unit spacing by default."""
    dims = tuple(int(d) for d in dims)
    if spacing is None:
        spacing = (1.0,) * len(dims)
    return Mask(np.ones(dims, dtype=bool), tuple(spacing))


@dataclass(frozen=True)
class ManifoldSummary:
    """Geometric summary of the voxel manifold."""

    volume: float
    boundary_area: float
    euler_characteristic: int


def _cell_counts(inclusion: np.ndarray) -> dict[tuple[int, ...], int]:
    """Count the cells of the cubical complex carved out by the voxel boxes.

    Returns counts keyed by the tuple of axes along which the cell has
    extent (() for vertices, (d,) for edges along axis d, and so on). A
    cell of the box-corner lattice is present when at least one of the
    voxel boxes incident to it is included.
    """
    dims = inclusion.shape
    ndim = inclusion.ndim
    counts: dict[tuple[int, ...], int] = {}
    for k in range(ndim + 1):
        for axes in itertools.combinations(range(ndim), k):
            shape = tuple(
                dims[d] if d in axes else dims[d] + 1 for d in range(ndim)
            )
            # A cell is present when any incident box is included; boxes
            # incident to it differ by 0/1 shifts along the off axes.
            present = np.zeros(shape, dtype=bool)
            off_axes = [d for d in range(ndim) if d not in axes]
            for offsets in itertools.product((0, 1), repeat=len(off_axes)):
                target = [slice(None)] * ndim
                for d, off in zip(off_axes, offsets):
                    target[d] = slice(off, off + dims[d])
                chunk = np.zeros(shape, dtype=bool)
                chunk[tuple(target)] = inclusion
                present |= chunk
            counts[axes] = int(present.sum())
    return counts


def build_voxel_manifold(mask: Mask) -> ManifoldSummary:
    """Volume, boundary area, and Euler characteristic of the manifold.

    The Euler characteristic is the alternating cell count of the
    cubical complex formed by the included voxel boxes. The boundary
    area sums the areas of box faces exposed to excluded or outside
    territory (endpoint count in 1D).
    """
    inc = mask.inclusion
    h = np.asarray(mask.spacing)
    volume = mask.n_voxels * float(np.prod(h))

    boundary_area = 0.0
    for d in range(mask.ndim):
        padded = np.zeros(
            tuple(n + 2 if ax == d else n for ax, n in enumerate(inc.shape)),
            dtype=bool,
        )
        sel = [slice(None)] * mask.ndim
        sel[d] = slice(1, -1)
        padded[tuple(sel)] = inc
        lower = [slice(None)] * mask.ndim
        upper = [slice(None)] * mask.ndim
        lower[d] = slice(0, -1)
        upper[d] = slice(1, None)
        exposed = padded[tuple(lower)] != padded[tuple(upper)]
        face_area = float(np.prod(h)) / h[d]
        boundary_area += float(exposed.sum()) * face_area

    counts = _cell_counts(inc)
    chi = sum((-1) ** len(axes) * n for axes, n in counts.items())
    return ManifoldSummary(volume, boundary_area, int(chi))


@dataclass
class FineGrid:
    """Evaluation grid with r added points per voxel per axis.

    Grid points live on the fine lattice of step h_d / (r + 1). For odd
    r the points include box corners and faces shared between adjacent
    voxels (deduplicated); for even r all points are interior to the
    boxes. `points` lists physical coordinates in row-major
    (lexicographic) order.
    """

    parent: Mask
    r: int
    step: tuple[float, ...]
    offset: int  # fine-lattice index of the first voxel centre minus 0
    presence: np.ndarray  # bool over the fine bounding lattice
    points: np.ndarray  # (P, D) float coordinates
    index: np.ndarray  # (P, D) fine-lattice integer indices
    point_ptr: np.ndarray  # fine lattice -> point id, -1 where absent
    volume_weights: np.ndarray | None = None  # (P,)
    face_sets: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict
    )
    component_endpoints: np.ndarray | None = None  # 1D only, (n_comp, 2)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def ndim(self) -> int:
        return self.parent.ndim

    def lattice_from_points(self, values: np.ndarray, fill: float) -> np.ndarray:
        """Scatter per-point values onto the fine bounding lattice."""
        values = np.asarray(values)
        out = np.full(values.shape[:-1] + self.presence.shape, fill, dtype=float)
        out[..., self.presence] = values
        return out

    def voxel_center_point_ids(self) -> np.ndarray:
        """Point ids of the grid points sitting on voxel centres."""
        idx = self.parent.voxel_indices() * (self.r + 1) + self.offset
        ids = self.point_ptr[tuple(idx.T)]
        if (ids < 0).any():
            raise RuntimeError("voxel centre missing from grid")
        return ids


def refine(mask: Mask, r: int) -> FineGrid:
    """Build the refined evaluation grid with r added points per axis.

    Weights and boundary face sets are populated eagerly via
    `integration_weights`.
    """
    if r < 0 or int(r) != r:
        raise ValueError(f"added resolution must be a nonnegative integer, got {r}")
    r = int(r)
    ndim = mask.ndim
    dims = mask.dims
    kmax = (r + 1) // 2
    step = tuple(h / (r + 1) for h in mask.spacing)
    fine_shape = tuple((n - 1) * (r + 1) + 2 * kmax + 1 for n in dims)

    presence = np.zeros(fine_shape, dtype=bool)
    sel = tuple(slice(kmax, kmax + (n - 1) * (r + 1) + 1, r + 1) for n in dims)
    presence[sel] = mask.inclusion
    # Separable box dilation marks every grid point of every included box.
    for d in range(ndim):
        if kmax == 0:
            break
        acc = presence.copy()
        for shift in range(1, kmax + 1):
            src_lo = [slice(None)] * ndim
            dst_lo = [slice(None)] * ndim
            src_lo[d] = slice(shift, None)
            dst_lo[d] = slice(0, fine_shape[d] - shift)
            acc[tuple(dst_lo)] |= presence[tuple(src_lo)]
            src_hi = [slice(None)] * ndim
            dst_hi = [slice(None)] * ndim
            src_hi[d] = slice(0, fine_shape[d] - shift)
            dst_hi[d] = slice(shift, None)
            acc[tuple(dst_hi)] |= presence[tuple(src_hi)]
        presence = acc

    index = np.argwhere(presence)
    coords = (index - kmax) * np.asarray(step)
    point_ptr = np.full(fine_shape, -1, dtype=np.int64)
    point_ptr[presence] = np.arange(index.shape[0])

    grid = FineGrid(
        parent=mask,
        r=r,
        step=step,
        offset=kmax,
        presence=presence,
        points=np.ascontiguousarray(coords, dtype=float),
        index=index,
        point_ptr=point_ptr,
    )
    integration_weights(grid)
    return grid


def _axis_ownership(grid: FineGrid):
    """Per-axis voxel ownership and clipped extents of each grid cell.

    For every grid point and axis, returns the voxel index owning the
    lower and upper part of the cell around the point, the extent of
    each part, and whether the point sits on a box face shared between
    voxel columns (only possible for odd r).
    """
    r = grid.r
    idx = grid.index
    ndim = grid.ndim
    q, rem = np.divmod(idx, r + 1)
    on_face = (r % 2 == 1) & (rem == 0)
    i_hi = q
    i_lo = np.where(on_face, q - 1, q)
    steps = np.asarray(grid.step)
    half = steps / 2.0
    ext_lo = np.where(on_face, half, steps)
    ext_hi = np.where(on_face, half, 0.0)
    return i_lo, i_hi, ext_lo, ext_hi, on_face


def _included_at(mask: Mask, idx_arrays: list[np.ndarray]) -> np.ndarray:
    """Inclusion lookup with out-of-range indices treated as excluded."""
    ok = np.ones(idx_arrays[0].shape, dtype=bool)
    clipped = []
    for d, arr in enumerate(idx_arrays):
        ok &= (arr >= 0) & (arr < mask.dims[d])
        clipped.append(np.clip(arr, 0, mask.dims[d] - 1))
    return ok & mask.inclusion[tuple(clipped)]


def integration_weights(grid: FineGrid) -> FineGrid:
    """Populate clipped-cell volume weights and boundary face sets.

    The cell around a grid point is the axis-aligned box of side
    h_d/(r+1); its weight is the volume of the intersection with the
    voxel manifold. Face sets list, per tangent-plane class, the grid
    points on exposed box faces together with the clipped face measure.
    In 1D the per-component interval endpoints are recorded instead.
    """
    mask = grid.parent
    ndim = grid.ndim
    i_lo, i_hi, ext_lo, ext_hi, on_face = _axis_ownership(grid)
    n = grid.n_points

    weights = np.zeros(n, dtype=float)
    for combo in itertools.product((0, 1), repeat=ndim):
        ext = np.ones(n, dtype=float)
        vox = []
        for d, side in enumerate(combo):
            ext = ext * (ext_hi[:, d] if side else ext_lo[:, d])
            vox.append(i_hi[:, d] if side else i_lo[:, d])
        live = ext > 0.0
        if not live.any():
            continue
        inc = _included_at(mask, [v[live] for v in vox])
        weights[live] += ext[live] * inc
    grid.volume_weights = weights

    face_sets: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
    if ndim >= 2:
        for normal in range(ndim):
            tangent = tuple(d for d in range(ndim) if d != normal)
            cand = np.flatnonzero(on_face[:, normal])
            if cand.size == 0:
                face_sets[tangent] = (
                    np.zeros(0, dtype=np.int64),
                    np.zeros(0, dtype=float),
                )
                continue
            w = np.zeros(cand.size, dtype=float)
            for combo in itertools.product((0, 1), repeat=len(tangent)):
                ext = np.ones(cand.size, dtype=float)
                plane_vox: dict[int, np.ndarray] = {}
                for ax, side in zip(tangent, combo):
                    ext = ext * (
                        ext_hi[cand, ax] if side else ext_lo[cand, ax]
                    )
                    plane_vox[ax] = i_hi[cand, ax] if side else i_lo[cand, ax]
                live = ext > 0.0
                if not live.any():
                    continue
                below = []
                above = []
                for d in range(ndim):
                    if d == normal:
                        below.append(i_lo[cand, normal][live])
                        above.append(i_hi[cand, normal][live])
                    else:
                        below.append(plane_vox[d][live])
                        above.append(plane_vox[d][live])
                exposed = _included_at(mask, below) != _included_at(mask, above)
                w[live] += ext[live] * exposed
            keep = w > 0.0
            face_sets[tangent] = (cand[keep], w[keep])
    grid.face_sets = face_sets

    if ndim == 1:
        inc = mask.inclusion
        padded = np.concatenate([[False], inc, [False]])
        starts = np.flatnonzero(padded[1:] & ~padded[:-1])
        ends = np.flatnonzero(~padded[1:] & padded[:-1])
        h = mask.spacing[0]
        grid.component_endpoints = np.stack(
            [starts * h - h / 2.0, ends * h - h / 2.0], axis=1
        )
    return grid

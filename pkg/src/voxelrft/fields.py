"""Convolution fields: smoothed lattice data evaluated anywhere.

A convolution field attaches to each point s of the voxel manifold the
truncated kernel sum over included voxels, Y(s) = sum_v K(s - v) X(v).
Values at voxel centres reproduce ordinary lattice smoothing; between
centres the field interpolates smoothly and carries exact analytic
gradients. Evaluation comes in two flavours: dense separable
contraction onto a refined grid, and windowed gathers at arbitrary
point batches (used by the continuous optimizer).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .grid import FineGrid, Mask
from .kernels import GaussianKernel

__all__ = [
    "LatticeSample",
    "ScalarField",
    "FieldMaximum",
    "ConvolutionEvaluator",
    "TFieldEvaluator",
    "eval_convolution",
    "fields_on_grid",
    "smooth_on_grid",
    "grid_local_maxima",
    "find_field_maximum",
    "supremum_abs",
]


@dataclass(frozen=True)
class LatticeSample:
    """Multi-subject observations on the included voxels of a mask.

    data has shape (n_subjects, n_included) with voxels ordered
    row-major (last axis fastest), matching `Mask.voxel_indices`.
    """

    mask: Mask
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(np.asarray(self.data, dtype=float))
        if data.ndim != 2:
            raise ValueError(f"sample data must be 2D, got shape {data.shape}")
        if data.shape[1] != self.mask.n_voxels:
            raise ValueError(
                f"sample has {data.shape[1]} voxels, mask has {self.mask.n_voxels}"
            )
        object.__setattr__(self, "data", data)

    @property
    def n_subjects(self) -> int:
        return self.data.shape[0]

    def full_data(self) -> np.ndarray:
        """(n_subjects, *dims) array, zero outside the mask."""
        return self.mask.full_from_included(self.data)


@dataclass(frozen=True)
class ScalarField:
    """Field values (and optionally gradients) on a refined grid."""

    grid: FineGrid
    values: np.ndarray  # (P,)
    gradient: np.ndarray | None = None  # (P, D)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise ValueError(
                f"values shape {values.shape} does not match grid size "
                f"{self.grid.n_points}"
            )
        object.__setattr__(self, "values", values)
        if self.gradient is not None:
            grad = np.asarray(self.gradient, dtype=float)
            if grad.shape != (self.grid.n_points, self.grid.ndim):
                raise ValueError(f"gradient shape {grad.shape} invalid")
            object.__setattr__(self, "gradient", grad)


@dataclass(frozen=True)
class FieldMaximum:
    """Location and value of an optimized field maximum."""

    location: np.ndarray
    value: float
    n_starts: int


def _grid_axis_matrices(
    kernel: GaussianKernel, grid: FineGrid
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-axis kernel factor matrices (fine positions x voxel centres)."""
    mask = grid.parent
    values, derivs = [], []
    for d in range(mask.ndim):
        centers = np.arange(mask.dims[d]) * mask.spacing[d]
        targets = (np.arange(grid.presence.shape[d]) - grid.offset) * grid.step[d]
        X = targets[:, None] - centers[None, :]
        values.append(kernel.axis_profile(d, X))
        derivs.append(kernel.axis_profile_grad(d, X))
    return values, derivs


def _contract(full_data: np.ndarray, mats: list[np.ndarray]) -> np.ndarray:
    """Apply one axis matrix per data axis; leading axes are batch."""
    ndim = len(mats)
    out = full_data
    for d in range(ndim):
        out = np.tensordot(out, mats[d], axes=([out.ndim - ndim + d], [1]))
        out = np.moveaxis(out, -1, out.ndim - ndim + d)
    return out


def smooth_on_grid(
    full_data: np.ndarray,
    kernel: GaussianKernel,
    grid: FineGrid,
    gradients: bool = True,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Convolve full-lattice data (batch, *dims) onto the grid points.

    Returns values (batch, P) and, when requested, gradients
    (batch, P, D). Excluded voxels must already be zero in full_data.
    """
    mask = grid.parent
    ndim = mask.ndim
    full_data = np.asarray(full_data, dtype=float)
    squeeze = full_data.ndim == ndim
    if squeeze:
        full_data = full_data[None]
    vmats, dmats = _grid_axis_matrices(kernel, grid)
    vals = _contract(full_data, vmats)[..., grid.presence]
    grads = None
    if gradients:
        grads = np.empty(vals.shape + (ndim,), dtype=float)
        for d in range(ndim):
            mats = [dmats[e] if e == d else vmats[e] for e in range(ndim)]
            grads[..., d] = _contract(full_data, mats)[..., grid.presence]
    if squeeze:
        vals = vals[0]
        grads = grads[0] if grads is not None else None
    return vals, grads


def fields_on_grid(
    sample: LatticeSample,
    kernel: GaussianKernel,
    grid: FineGrid,
    gaussianize: bool = False,
    gradients: bool = True,
) -> list[ScalarField]:
    """Convolution field of every subject on the grid.

    With gaussianize=True the lattice data are passed through the
    pooled-null marginal transform before smoothing.
    """
    if grid.parent.dims != sample.mask.dims or not np.array_equal(
        grid.parent.inclusion, sample.mask.inclusion
    ):
        raise ValueError("grid and sample use different masks")
    data = sample.data
    if gaussianize:
        from .gaussianize import gaussianize as _gaussianize

        data = _gaussianize(data)
    full = sample.mask.full_from_included(data)
    vals, grads = smooth_on_grid(full, kernel, grid, gradients=gradients)
    return [
        ScalarField(grid, vals[n], grads[n] if grads is not None else None)
        for n in range(sample.n_subjects)
    ]


class _WindowGather:
    """Windowed kernel evaluation of padded lattice data at point batches."""

    def __init__(self, full_data: np.ndarray, mask: Mask, kernel: GaussianKernel):
        if kernel.ndim != mask.ndim:
            raise ValueError(
                f"kernel covers {kernel.ndim} axes, mask has {mask.ndim}"
            )
        self.mask = mask
        self.kernel = kernel
        self.ndim = mask.ndim
        self.h = np.asarray(mask.spacing)
        self.radius_vox = np.array(
            [
                int(math.ceil(kernel.support_radius[d] / self.h[d]))
                for d in range(self.ndim)
            ]
        )
        self.widths = 2 * self.radius_vox + 1
        pad = [(w, w) for w in self.widths]
        batch_pad = [(0, 0)] * (full_data.ndim - self.ndim)
        self.padded = np.pad(full_data, batch_pad + pad)
        self.included_padded = np.pad(mask.inclusion, pad)

    def _window_indices(self, points: np.ndarray):
        """Per-axis voxel index windows and kernel weights for each point."""
        idx, weights, dweights = [], [], []
        for d in range(self.ndim):
            c = points[:, d] / self.h[d]
            i0 = np.ceil(c - self.radius_vox[d]).astype(np.int64)
            cols = i0[:, None] + np.arange(self.widths[d])
            x = points[:, d, None] - cols * self.h[d]
            weights.append(self.kernel.axis_profile(d, x))
            dweights.append(self.kernel.axis_profile_grad(d, x))
            # Clip for safe gathering; clipped positions always carry
            # zero kernel weight because they lie beyond the support.
            cols = np.clip(
                cols, -self.widths[d], self.mask.dims[d] + self.widths[d] - 1
            )
            idx.append(cols + self.widths[d])
        return idx, weights, dweights

    def gather(self, points: np.ndarray):
        """Window tensors: (batch..., M, W_1, ..., W_D) plus weights."""
        idx, weights, dweights = self._window_indices(points)
        m = points.shape[0]
        ix = []
        for d in range(self.ndim):
            shape = [m] + [1] * self.ndim
            shape[1 + d] = self.widths[d]
            ix.append(idx[d].reshape(shape))
        win = self.padded[(Ellipsis, *ix)]
        return win, weights, dweights

    def supported(self, points: np.ndarray) -> np.ndarray:
        """True where at least one included voxel has positive weight."""
        idx, weights, _ = self._window_indices(points)
        m = points.shape[0]
        ix = []
        for d in range(self.ndim):
            shape = [m] + [1] * self.ndim
            shape[1 + d] = self.widths[d]
            ix.append(idx[d].reshape(shape))
        inc = self.included_padded[tuple(ix)]
        pos = np.ones(inc.shape, dtype=bool)
        for d in range(self.ndim):
            shape = [m] + [1] * self.ndim
            shape[1 + d] = self.widths[d]
            pos &= (weights[d] > 0).reshape(shape)
        return (inc & pos).any(axis=tuple(range(1, 1 + self.ndim)))

    def values_and_grads(self, points: np.ndarray, gradients: bool = True):
        win, weights, dweights = self.gather(points)
        letters = "xyz"[: self.ndim]
        spec_win = "...m" + letters
        operands = [win] + [weights[d] for d in range(self.ndim)]
        spec = (
            spec_win
            + ","
            + ",".join("m" + letters[d] for d in range(self.ndim))
            + "->...m"
        )
        vals = np.einsum(spec, *operands, optimize=True)
        if not gradients:
            return vals, None
        grads = np.empty(vals.shape + (self.ndim,), dtype=float)
        for d in range(self.ndim):
            ops = [win] + [
                dweights[e] if e == d else weights[e] for e in range(self.ndim)
            ]
            grads[..., d] = np.einsum(spec, *ops, optimize=True)
        return vals, grads


def eval_convolution(
    row: np.ndarray,
    mask: Mask,
    kernel: GaussianKernel,
    points: np.ndarray,
    gradients: bool = False,
):
    """Convolution field of one lattice image at arbitrary points.

    row holds the included-voxel values. Raises for points outside the
    kernel support of every included voxel.
    """
    row = np.asarray(row, dtype=float)
    if row.shape != (mask.n_voxels,):
        raise ValueError(f"row has shape {row.shape}, expected ({mask.n_voxels},)")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != mask.ndim:
        raise ValueError(
            f"points have {points.shape[1]} coordinates, mask has {mask.ndim}"
        )
    gatherer = _WindowGather(mask.full_from_included(row), mask, kernel)
    ok = gatherer.supported(points)
    if not ok.all():
        bad = points[np.flatnonzero(~ok)[0]]
        raise ValueError(f"unsupported point {tuple(bad)}")
    vals, grads = gatherer.values_and_grads(points, gradients=gradients)
    return (vals, grads) if gradients else vals


class ConvolutionEvaluator:
    """Batch evaluator for all subjects of a sample at arbitrary points."""

    def __init__(
        self,
        sample: LatticeSample,
        kernel: GaussianKernel,
        chunk: int = 64,
    ):
        self._gather = _WindowGather(sample.full_data(), sample.mask, kernel)
        self.n_subjects = sample.n_subjects
        self.chunk = chunk

    def __call__(self, points: np.ndarray, gradients: bool = True):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        vals = np.empty((self.n_subjects, points.shape[0]), dtype=float)
        grads = (
            np.empty((self.n_subjects, points.shape[0], points.shape[1]))
            if gradients
            else None
        )
        for lo in range(0, points.shape[0], self.chunk):
            sl = slice(lo, lo + self.chunk)
            v, g = self._gather.values_and_grads(points[sl], gradients=gradients)
            vals[:, sl] = v
            if gradients:
                grads[:, sl] = g
        return vals, grads


class TFieldEvaluator:
    """One-sample t statistic of the subject convolution fields.

    Callable on an (M, D) point batch; returns the t values (M,) and
    their gradients (M, D). `sign=-1` evaluates the negated statistic,
    used when searching for the minimum.
    """

    def __init__(
        self,
        sample: LatticeSample,
        kernel: GaussianKernel,
        sign: float = 1.0,
        gaussianize: bool = False,
    ):
        if sample.n_subjects < 3:
            raise ValueError(
                f"t statistic needs at least 3 subjects, got {sample.n_subjects}"
            )
        data = sample.data
        if gaussianize:
            from .gaussianize import gaussianize as _gaussianize

            data = _gaussianize(data)
            sample = LatticeSample(sample.mask, data)
        self._conv = ConvolutionEvaluator(sample, kernel)
        self.sign = float(sign)

    def negated(self) -> "TFieldEvaluator":
        out = object.__new__(TFieldEvaluator)
        out._conv = self._conv
        out.sign = -self.sign
        return out

    def __call__(self, points: np.ndarray):
        vals, grads = self._conv(points)
        t, gt = t_statistic_pointwise(vals, grads)
        return self.sign * t, self.sign * gt


def t_statistic_pointwise(values: np.ndarray, grads: np.ndarray | None):
    """t = sqrt(N) mean/sd and its gradient from per-subject values.

    values is (N, M); grads is (N, M, D) or None.
    """
    n = values.shape[0]
    mean = values.mean(axis=0)
    centered = values - mean
    var = (centered**2).sum(axis=0) / (n - 1)
    sd = np.sqrt(var)
    if np.any(sd <= 0):
        m = int(np.flatnonzero(sd <= 0)[0])
        raise ValueError(f"zero variance at evaluation point index {m}")
    t = math.sqrt(n) * mean / sd
    if grads is None:
        return t, None
    gmean = grads.mean(axis=0)
    gsd = (centered[..., None] * (grads - gmean)).sum(axis=0) / ((n - 1) * sd[:, None])
    gt = math.sqrt(n) * (gmean * sd[:, None] - mean[:, None] * gsd) / var[:, None]
    return t, gt


def _shift_with_fill(arr: np.ndarray, offsets: tuple[int, ...], fill: float):
    out = np.full(arr.shape, fill, dtype=arr.dtype)
    src, dst = [], []
    for o, n in zip(offsets, arr.shape):
        if o >= 0:
            src.append(slice(0, n - o))
            dst.append(slice(o, n))
        else:
            src.append(slice(-o, n))
            dst.append(slice(0, n + o))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def grid_local_maxima(grid: FineGrid, values: np.ndarray) -> np.ndarray:
    """Point ids of discrete local maxima under full lattice adjacency.

    A point qualifies when its value is >= every existing neighbour
    among the 3^D - 1 surrounding fine-lattice sites.
    """
    lat = grid.lattice_from_points(values, fill=-np.inf)
    best = np.ones(lat.shape, dtype=bool)
    for off in itertools.product((-1, 0, 1), repeat=grid.ndim):
        if all(o == 0 for o in off):
            continue
        best &= lat >= _shift_with_fill(lat, off, -np.inf)
    return np.flatnonzero(best[grid.presence])


def _project_to_manifold(points: np.ndarray, mask: Mask) -> np.ndarray:
    """Euclidean projection onto the union of included voxel boxes."""
    h = np.asarray(mask.spacing)
    dims = np.asarray(mask.dims)
    ndim = mask.ndim
    points = np.atleast_2d(points)
    base = np.floor(points / h + 0.5).astype(np.int64)

    best_d2 = np.full(points.shape[0], np.inf)
    best = np.empty_like(points)
    for off in itertools.product(range(-3, 4), repeat=ndim):
        idx = base + np.asarray(off)
        valid = np.all((idx >= 0) & (idx < dims), axis=1)
        if not valid.any():
            continue
        clipped = np.clip(idx, 0, dims - 1)
        included = mask.inclusion[tuple(clipped.T)] & valid
        if not included.any():
            continue
        center = idx * h
        cand = np.clip(points, center - h / 2.0, center + h / 2.0)
        d2 = ((points - cand) ** 2).sum(axis=1)
        d2 = np.where(included, d2, np.inf)
        better = d2 < best_d2
        best_d2 = np.where(better, d2, best_d2)
        best[better] = cand[better]

    missing = ~np.isfinite(best_d2)
    if missing.any():
        # Far from any nearby box: fall back to scanning all voxels.
        centers = mask.voxel_centers()
        for i in np.flatnonzero(missing):
            cand = np.clip(points[i], centers - h / 2.0, centers + h / 2.0)
            d2 = ((points[i] - cand) ** 2).sum(axis=1)
            j = int(np.argmin(d2))
            best[i] = cand[j]
    return best


def _projected_ascent(
    evaluate,
    starts: np.ndarray,
    mask: Mask,
    grad_tol: float = 1e-8,
    step_tol: float = 1e-10,
    max_iter: int = 200,
):
    """Batched projected gradient ascent with Barzilai-Borwein steps.

    Each iteration evaluates one trial point per active start; failed
    Armijo trials halve the step and retry on the next iteration, so
    objective values never decrease. Returns the per-start final points
    and values.
    """
    h_min = min(mask.spacing)
    x = _project_to_manifold(starts, mask)
    f, g = evaluate(x)
    gnorm = np.linalg.norm(g, axis=1)
    t = h_min / (4.0 * np.maximum(gnorm, 1e-30))
    active = gnorm >= grad_tol

    for _ in range(max_iter):
        ids = np.flatnonzero(active)
        if ids.size == 0:
            break
        xa, fa, ga, ta = x[ids], f[ids], g[ids], t[ids]
        ginf = np.max(np.abs(ga), axis=1)
        t_eff = np.minimum(ta, h_min / np.maximum(ginf, 1e-30))
        cand = _project_to_manifold(xa + t_eff[:, None] * ga, mask)
        fc, gc = evaluate(cand)
        dx = cand - xa
        lin = (ga * dx).sum(axis=1)
        # Projection can misalign the step with the gradient; clamping
        # the linear model at zero keeps accepted values nondecreasing.
        accept = fc >= fa + 1e-4 * np.maximum(lin, 0.0)

        rej = ids[~accept]
        t[rej] = t_eff[~accept] / 2.0
        stuck = t[rej] * np.max(np.abs(g[rej]), axis=1) < step_tol
        active[rej[stuck]] = False

        acc = ids[accept]
        if acc.size:
            dxa = dx[accept]
            y = gc[accept] - ga[accept]
            sy = -(dxa * y).sum(axis=1)
            ss = (dxa * dxa).sum(axis=1)
            bb = np.where(sy > 1e-30, ss / np.maximum(sy, 1e-30), 2.0 * t_eff[accept])
            t[acc] = np.clip(bb, 1e-12, 1e6)
            x[acc] = cand[accept]
            f[acc] = fc[accept]
            g[acc] = gc[accept]
            done = (np.linalg.norm(gc[accept], axis=1) < grad_tol) | (
                np.linalg.norm(dxa, axis=1) < step_tol
            )
            active[acc[done]] = False
    return x, f


def find_field_maximum(
    evaluator,
    grid: FineGrid,
    values: np.ndarray | None = None,
) -> FieldMaximum:
    """Continuous maximum of a field over the voxel manifold.

    evaluator maps an (M, D) point batch to (values (M,), gradients
    (M, D)). Every discrete local maximum of the field on the grid
    seeds one projected ascent; the returned value is never below the
    grid maximum. The grid must carry added resolution (r >= 1) so the
    seeds bracket every continuous maximum.
    """
    if grid.r < 1:
        raise ValueError(f"optimizer grid needs added resolution r >= 1, got r={grid.r}")
    if values is None:
        chunks = []
        for lo in range(0, grid.n_points, 4096):
            v, _ = evaluator(grid.points[lo : lo + 4096])
            chunks.append(v)
        values = np.concatenate(chunks)
    seed_ids = grid_local_maxima(grid, values)
    starts = grid.points[seed_ids]
    xf, ff = _projected_ascent(evaluator, starts, grid.parent)
    best = int(np.argmax(ff))
    grid_best = int(np.argmax(values))
    if values[grid_best] > ff[best]:
        # Cannot happen when ascent only accepts improvements; kept as a
        # hard guarantee of the grid lower bound.
        return FieldMaximum(
            grid.points[grid_best].copy(), float(values[grid_best]), starts.shape[0]
        )
    return FieldMaximum(xf[best].copy(), float(ff[best]), starts.shape[0])


def supremum_abs(
    evaluator,
    grid: FineGrid,
    values: np.ndarray | None = None,
) -> float:
    """Supremum of |field| over the manifold via two signed searches.

    evaluator must expose `negated()` returning the sign-flipped
    evaluator (TFieldEvaluator does); values, when given, are the
    signed field values on the grid.
    """
    if values is None:
        chunks = []
        for lo in range(0, grid.n_points, 4096):
            v, _ = evaluator(grid.points[lo : lo + 4096])
            chunks.append(v)
        values = np.concatenate(chunks)
    high = find_field_maximum(evaluator, grid, values=values)
    low = find_field_maximum(evaluator.negated(), grid, values=-values)
    return max(high.value, low.value)

"""Separable Gaussian smoothing kernels and their exact roughness.

The kernel bandwidth is specified as a full width at half maximum in
voxel units and converted to a per-axis standard deviation in physical
units using the lattice spacing. Evaluation support is cut off per axis
at a fixed multiple of sigma, which keeps separable evaluation on
grids, arbitrary-point evaluation, and the closed-form roughness sums
below all equal to the same truncated lattice sum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .grid import FineGrid, Mask

__all__ = [
    "GaussianKernel",
    "fwhm_to_sigma",
    "eval_kernel",
    "eval_kernel_gradient",
    "theoretical_lambda_white_noise",
    "true_lambda_discrete",
    "true_lambda_on_grid",
]

_FWHM_FACTOR = math.sqrt(8.0 * math.log(2.0))


def fwhm_to_sigma(fwhm: float) -> float:
    """Standard deviation of a Gaussian with the given full width at
    half maximum: sigma = fwhm / sqrt(8 ln 2)."""
    if fwhm <= 0:
        raise ValueError(f"fwhm must be positive, got {fwhm}")
    return float(fwhm) / _FWHM_FACTOR


@dataclass(frozen=True)
class GaussianKernel:
    """Isotropic (in voxel units) truncated Gaussian kernel.

    Parameters
    ----------
    fwhm : float
        Full width at half maximum in voxel units, positive.
    spacing : tuple of float
        Lattice spacing per axis; sets the physical bandwidth
        sigma_d = fwhm * h_d / sqrt(8 ln 2) and the dimension.
    truncation : float
        Support half-width per axis in units of sigma, at least 4.
    """

    fwhm: float
    spacing: tuple[float, ...]
    truncation: float = 4.0

    def __post_init__(self) -> None:
        if self.fwhm <= 0 or not np.isfinite(self.fwhm):
            raise ValueError(f"fwhm must be positive, got {self.fwhm}")
        spacing = tuple(float(h) for h in self.spacing)
        if not 1 <= len(spacing) <= 3:
            raise ValueError(f"spacing must cover 1 to 3 axes, got {len(spacing)}")
        if any(h <= 0 for h in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        if self.truncation < 4.0:
            raise ValueError(
                f"truncation must be at least 4 sigma, got {self.truncation}"
            )
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.spacing)

    @property
    def sigma(self) -> tuple[float, ...]:
        """Per-axis standard deviation in physical units."""
        return tuple(fwhm_to_sigma(self.fwhm) * h for h in self.spacing)

    @property
    def support_radius(self) -> tuple[float, ...]:
        """Per-axis half-width of the support cutoff in physical units."""
        return tuple(self.truncation * s for s in self.sigma)

    def axis_profile(self, axis: int, x: np.ndarray) -> np.ndarray:
        """1D Gaussian factor along one axis, zero outside the cutoff."""
        s = self.sigma[axis]
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.truncation * s
        out = np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
        return np.where(inside, out, 0.0)

    def axis_profile_grad(self, axis: int, x: np.ndarray) -> np.ndarray:
        """Derivative of the 1D factor, zero outside the cutoff."""
        s = self.sigma[axis]
        x = np.asarray(x, dtype=float)
        return (-x / s**2) * self.axis_profile(axis, x)


def kernel_for_mask(fwhm: float, mask: Mask, truncation: float = 4.0) -> GaussianKernel:
    """Kernel matched to a mask's dimension and spacing."""
    return GaussianKernel(fwhm, mask.spacing, truncation)


def eval_kernel(kernel: GaussianKernel, x: np.ndarray) -> np.ndarray:
    """Kernel value at displacement(s) x, zero outside the support box.

    x has shape (..., D); the result drops the last axis.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[-1] != kernel.ndim:
        raise ValueError(
            f"displacement has {x.shape[-1]} coordinates, kernel has {kernel.ndim}"
        )
    out = np.ones(x.shape[:-1], dtype=float)
    for d in range(kernel.ndim):
        out = out * kernel.axis_profile(d, x[..., d])
    return out if out.shape else float(out)


def eval_kernel_gradient(kernel: GaussianKernel, x: np.ndarray) -> np.ndarray:
    """Gradient of the kernel at displacement(s) x, shape (..., D)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[-1] != kernel.ndim:
        raise ValueError(
            f"displacement has {x.shape[-1]} coordinates, kernel has {kernel.ndim}"
        )
    factors = [kernel.axis_profile(d, x[..., d]) for d in range(kernel.ndim)]
    grads = [kernel.axis_profile_grad(d, x[..., d]) for d in range(kernel.ndim)]
    out = np.empty(x.shape, dtype=float)
    for d in range(kernel.ndim):
        comp = grads[d]
        for e in range(kernel.ndim):
            if e != d:
                comp = comp * factors[e]
        out[..., d] = comp
    return out


def theoretical_lambda_white_noise(kernel: GaussianKernel) -> np.ndarray:
    """Gradient covariance of a unit-variance Gaussian-smoothed white
    noise field on a full continuum of contributing sites.

    Diagonal with entries 4 ln 2 / fwhm_d^2 where fwhm_d is the
    physical full width along axis d.
    """
    fwhm_phys = np.array([kernel.fwhm * h for h in kernel.spacing])
    return np.diag(4.0 * math.log(2.0) / fwhm_phys**2)


def _point_in_manifold(mask: Mask, point: np.ndarray, tol: float = 1e-9) -> bool:
    h = np.asarray(mask.spacing)
    base = np.floor(point / h + 0.5).astype(int)
    for offs in itertools.product((-1, 0, 1), repeat=mask.ndim):
        idx = base + np.asarray(offs)
        if ((idx < 0) | (idx >= np.asarray(mask.dims))).any():
            continue
        if not mask.inclusion[tuple(idx)]:
            continue
        if (np.abs(point - idx * h) <= h / 2.0 + tol * h).all():
            return True
    return False


def _lambda_from_moments(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Roughness matrix of the variance-normalized field from the raw
    second-moment sums.

    With K the kernel and the sums running over contributing sites,
    C = sum K^2 is the field variance, B_i = sum K dK_i is half the
    variance gradient, and A_ij = sum dK_i dK_j is the raw gradient
    covariance. The normalized field Y/sqrt(C) has gradient covariance
    (A - B B^T / C) / C, exact for unit-variance white noise.
    """
    C = np.asarray(C, dtype=float)
    if np.any(C <= 0):
        raise ValueError("no voxel contributes at the evaluation point")
    outer = B[..., :, None] * B[..., None, :]
    return (A - outer / C[..., None, None]) / C[..., None, None]


def true_lambda_discrete(
    kernel: GaussianKernel, mask: Mask, point: np.ndarray
) -> np.ndarray:
    """Exact gradient covariance at one point of the unit-variance
    convolution field built from i.i.d. standard normal lattice noise.

    Sums run over the included voxels inside the kernel support around
    the point. Raises if the point lies outside the voxel manifold.
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    if point.size != mask.ndim:
        raise ValueError(
            f"point has {point.size} coordinates, mask has {mask.ndim} axes"
        )
    if not _point_in_manifold(mask, point):
        raise ValueError(f"point {tuple(point)} outside voxel manifold")
    h = np.asarray(mask.spacing)
    radius = np.asarray(kernel.support_radius)
    lo = np.maximum(np.ceil((point - radius) / h).astype(int), 0)
    hi = np.minimum(np.floor((point + radius) / h).astype(int), np.asarray(mask.dims) - 1)
    if (lo > hi).any():
        raise ValueError(f"point {tuple(point)} outside kernel support of the mask")
    grids = np.meshgrid(*[np.arange(l, u + 1) for l, u in zip(lo, hi)], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    idx = idx[mask.inclusion[tuple(idx.T)]]
    if idx.shape[0] == 0:
        raise ValueError(f"point {tuple(point)} outside kernel support of the mask")
    disp = point - idx * h
    values = eval_kernel(kernel, disp)
    grads = eval_kernel_gradient(kernel, disp)
    C = float(np.sum(values**2))
    B = grads.T @ values
    A = grads.T @ grads
    return _lambda_from_moments(A, B, C)


def true_lambda_on_grid(kernel: GaussianKernel, grid: FineGrid) -> np.ndarray:
    """Exact gradient covariance of the normalized convolution field at
    every grid point, (P, D, D).

    Uses the separability of the squared kernel and its derivative
    products to evaluate the same truncated sums as
    `true_lambda_discrete` with per-axis weight matrices.
    """
    mask = grid.parent
    ndim = mask.ndim
    inc = mask.inclusion.astype(float)
    kmax = grid.offset

    # Per-axis factor matrices evaluated at (fine position - voxel centre).
    vv = []  # profile squared
    vd = []  # profile times derivative
    dd = []  # derivative squared
    for d in range(ndim):
        centers = np.arange(mask.dims[d]) * mask.spacing[d]
        targets = (np.arange(grid.presence.shape[d]) - kmax) * grid.step[d]
        X = targets[:, None] - centers[None, :]
        f = kernel.axis_profile(d, X)
        g = kernel.axis_profile_grad(d, X)
        vv.append(f * f)
        vd.append(f * g)
        dd.append(g * g)

    def contract(mats: list[np.ndarray]) -> np.ndarray:
        out = inc
        for d in range(ndim - 1, -1, -1):
            out = np.tensordot(mats[d], out, axes=([1], [d]))
            out = np.moveaxis(out, 0, d)
        return out[grid.presence]

    C = contract(vv)
    if np.any(C <= 0):
        raise ValueError("a grid point lies outside every voxel's kernel support")
    B = np.stack(
        [contract([vd[d] if e == d else vv[e] for e in range(ndim)]) for d in range(ndim)],
        axis=-1,
    )
    A = np.empty((grid.n_points, ndim, ndim), dtype=float)
    for d in range(ndim):
        for e in range(d, ndim):
            if d == e:
                mats = [dd[a] if a == d else vv[a] for a in range(ndim)]
            else:
                mats = [
                    vd[a] if a in (d, e) else vv[a] for a in range(ndim)
                ]
            A[:, d, e] = contract(mats)
            A[:, e, d] = A[:, d, e]
    return _lambda_from_moments(A, B, C)

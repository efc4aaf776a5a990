"""One-sample t-field construction and derivative-covariance estimation.

The three operations here are pointwise over a shared grid: the t
statistic of the subject convolution fields, the normalized residual
fields, and the covariance matrix of the residual derivatives. The
covariance estimator deliberately carries no small-sample correction
factor; the lattice-based estimators in `lkc` do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fields import ScalarField
from .grid import FineGrid

__all__ = [
    "TField",
    "ResidualSet",
    "t_field",
    "residual_fields",
    "lambda_hat",
]


@dataclass(frozen=True)
class TField:
    """t statistic on a grid, with optional analytic gradient."""

    grid: FineGrid
    n_subjects: int
    values: np.ndarray
    gradient: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.n_subjects < 3:
            raise ValueError(f"need at least 3 subjects, got {self.n_subjects}")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"{self.grid.n_points} grid points"
            )
        if not np.isfinite(values).all():
            raise ValueError("t-field values must be finite")
        object.__setattr__(self, "values", values)
        if self.gradient is not None:
            gradient = np.asarray(self.gradient, dtype=float)
            if gradient.shape != (self.grid.n_points, self.grid.ndim):
                raise ValueError(f"gradient shape {gradient.shape} is invalid")
            object.__setattr__(self, "gradient", gradient)

    @property
    def dof(self) -> int:
        return self.n_subjects - 1


@dataclass(frozen=True)
class ResidualSet:
    """Normalized subject residuals on a grid.

    Per point the residuals sum to zero and have unit sample variance
    (divisor N - 1); both are checked on construction.
    """

    grid: FineGrid
    values: np.ndarray
    gradients: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.grid.n_points:
            raise ValueError(f"residual values shape {values.shape} is invalid")
        if values.shape[0] < 3:
            raise ValueError(f"need at least 3 subjects, got {values.shape[0]}")
        n = values.shape[0]
        if np.abs(values.sum(axis=0)).max() > 1e-10 * n:
            raise ValueError("residuals do not sum to zero")
        ssq = (values**2).sum(axis=0) / (n - 1)
        if np.abs(ssq - 1.0).max() > 1e-10:
            raise ValueError("residuals do not have unit sample variance")
        object.__setattr__(self, "values", values)
        if self.gradients is not None:
            gradients = np.asarray(self.gradients, dtype=float)
            expect = values.shape + (self.grid.ndim,)
            if gradients.shape != expect:
                raise ValueError(
                    f"gradient shape {gradients.shape}, expected {expect}"
                )
            object.__setattr__(self, "gradients", gradients)

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]


def _stack_fields(fields: Sequence[ScalarField]):
    if len(fields) < 3:
        raise ValueError(f"need at least 3 subjects, got {len(fields)}")
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid is not grid and not (
            f.grid.r == grid.r
            and np.array_equal(f.grid.points, grid.points)
        ):
            raise ValueError("fields live on different grids")
    values = np.stack([f.values for f in fields])
    grads = None
    if all(f.gradient is not None for f in fields):
        grads = np.stack([f.gradient for f in fields])
    return grid, values, grads


def _moments(values: np.ndarray, grads: np.ndarray | None):
    """Pointwise mean and sd (divisor N - 1) with their gradients."""
    n = values.shape[0]
    mean = values.mean(axis=0)
    centered = values - mean
    sd = np.sqrt((centered**2).sum(axis=0) / (n - 1))
    bad = np.flatnonzero(sd == 0.0)
    if bad.size:
        raise ValueError(f"zero sample variance at grid point index {bad[0]}")
    if grads is None:
        return mean, sd, None, None, centered
    gmean = grads.mean(axis=0)
    gcentered = grads - gmean
    gsd = (centered[..., None] * gcentered).sum(axis=0) / ((n - 1) * sd[:, None])
    return mean, sd, gmean, gsd, centered


def t_field(fields: Sequence[ScalarField]) -> TField:
    """One-sample t statistic of the subject fields, pointwise.

    T = sqrt(N) mean / sd with the unbiased sd. The gradient follows
    by the quotient rule whenever every input carries one.
    """
    grid, values, grads = _stack_fields(fields)
    n = values.shape[0]
    mean, sd, gmean, gsd, _ = _moments(values, grads)
    tvals = math.sqrt(n) * mean / sd
    tgrad = None
    if grads is not None:
        tgrad = math.sqrt(n) * (gmean * sd[:, None] - mean[:, None] * gsd) / sd[
            :, None
        ] ** 2
    return TField(grid, n, tvals, tgrad)


def residual_fields(fields: Sequence[ScalarField]) -> ResidualSet:
    """Normalized residuals R_n = (Y_n - mean)/sd with their gradients."""
    grid, values, grads = _stack_fields(fields)
    mean, sd, gmean, gsd, centered = _moments(values, grads)
    res = centered / sd
    rgrads = None
    if grads is not None:
        rgrads = (grads - gmean) / sd[:, None] - res[..., None] * (
            gsd / sd[:, None]
        )
    return ResidualSet(grid, res, rgrads)


def lambda_hat(residuals: ResidualSet) -> np.ndarray:
    """Pointwise covariance of the residual derivatives.

    Returns a (P, D, D) array: the sample covariance (divisor N - 1)
    of the N residual gradient vectors at each point, symmetrized.
    """
    if residuals.gradients is None:
        raise ValueError("residual gradients missing")
    grads = residuals.gradients
    n = grads.shape[0]
    centered = grads - grads.mean(axis=0)
    lam = np.einsum("npi,npj->pij", centered, centered, optimize=True) / (n - 1)
    return 0.5 * (lam + lam.swapaxes(1, 2))

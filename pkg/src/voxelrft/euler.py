"""Euler characteristics of excursion sets and empirical EC curves.

Excursion sets are approximated by the cubical complex on the fine
grid: a k-cell enters the complex exactly when all of its 2^k corner
points sit at or above the level. The alternating cell count then
gives the Euler characteristic. The convention is a choice (no
discretization rule is canonical); it is consistent under refinement
and, for odd added resolution, reproduces the manifold's
characteristic once the level drops below the field minimum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .fields import ScalarField

__all__ = ["ECCurve", "excursion_ec", "ec_curve", "average_ec_curves"]

DEFAULT_CURVE_POINTS = 512


@dataclass(frozen=True)
class ECCurve:
    """Euler characteristic per threshold, with optional standard errors."""

    thresholds: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self) -> None:
        thresholds = np.asarray(self.thresholds, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if thresholds.ndim != 1 or thresholds.size == 0:
            raise ValueError("thresholds must be a nonempty 1D array")
        if np.any(np.diff(thresholds) <= 0):
            raise ValueError("thresholds must be strictly ascending")
        if values.shape != thresholds.shape:
            raise ValueError(
                f"{values.shape[0] if values.ndim else 0} values for "
                f"{thresholds.shape[0]} thresholds"
            )
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "values", values)
        if self.stderr is not None:
            stderr = np.asarray(self.stderr, dtype=float)
            if stderr.shape != thresholds.shape:
                raise ValueError("standard errors do not match thresholds")
            object.__setattr__(self, "stderr", stderr)


def _chi_of_above(above: np.ndarray) -> int:
    """Alternating cell count of the vertex-spanned cubical complex."""
    ndim = above.ndim
    chi = 0
    for axes in itertools.chain.from_iterable(
        itertools.combinations(range(ndim), k) for k in range(ndim + 1)
    ):
        cells = above
        for d in axes:
            lead = [slice(None)] * ndim
            lag = [slice(None)] * ndim
            lead[d] = slice(1, None)
            lag[d] = slice(None, -1)
            cells = cells[tuple(lead)] & cells[tuple(lag)]
        chi += (-1) ** len(axes) * int(np.count_nonzero(cells))
    return chi


def excursion_ec(field: ScalarField, u: float) -> int:
    """Euler characteristic of the excursion set {field >= u}."""
    lattice = field.grid.lattice_from_points(field.values, fill=-np.inf)
    return _chi_of_above(lattice >= u)


def default_thresholds(values: np.ndarray, max_points: int = DEFAULT_CURVE_POINTS):
    """Distinct field values, evenly subsampled to a bounded count."""
    distinct = np.unique(np.asarray(values, dtype=float))
    if distinct.size > max_points:
        pick = np.linspace(0, distinct.size - 1, max_points).round().astype(int)
        distinct = distinct[np.unique(pick)]
    return distinct


def ec_curve(field: ScalarField, thresholds=None) -> ECCurve:
    """Euler characteristic of the excursion set at each threshold.

    Without explicit thresholds the curve steps through the distinct
    field values (subsampled past 512), which captures every level at
    which the complex can change.
    """
    if thresholds is None:
        thresholds = default_thresholds(field.values)
    thresholds = np.asarray(thresholds, dtype=float)
    lattice = field.grid.lattice_from_points(field.values, fill=-np.inf)
    values = np.array([_chi_of_above(lattice >= u) for u in thresholds], dtype=float)
    return ECCurve(thresholds, values)


def average_ec_curves(curves: list[ECCurve]) -> ECCurve:
    """Pointwise mean curve with CLT standard errors.

    All curves must share the identical threshold vector. A single
    curve averages to itself with zero standard error.
    """
    if not curves:
        raise ValueError("no curves to average")
    thresholds = curves[0].thresholds
    for c in curves[1:]:
        if not np.array_equal(c.thresholds, thresholds):
            raise ValueError("curves use different thresholds")
    stack = np.stack([c.values for c in curves])
    mean = stack.mean(axis=0)
    if stack.shape[0] > 1:
        se = stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    else:
        se = np.zeros_like(mean)
    return ECCurve(thresholds, mean, se)

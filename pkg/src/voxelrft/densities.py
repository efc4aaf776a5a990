"""Euler characteristic densities, expected EC, and FWER thresholds.

The densities implement the classical closed forms for t fields (with
their Gaussian limits as a cross-check variant), normalized so that
the expected Euler characteristic of an excursion set is the plain
inner product with the domain's curvatures. All solvers work on that
inner product only, so they are agnostic to how the curvatures were
estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _stats

from .lkc import LKCVector

__all__ = [
    "ECDensityParams",
    "ec_density",
    "eec",
    "fwer_threshold",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ECDensityParams:
    """Field family and degrees of freedom for the EC densities."""

    df: int | None = None
    field_type: str = "t"

    def __post_init__(self) -> None:
        if self.field_type not in ("t", "gaussian"):
            raise ValueError(f"unknown field type {self.field_type!r}")
        if self.field_type == "t":
            if self.df is None or self.df < 2:
                raise ValueError(
                    f"t densities need at least 2 degrees of freedom, got {self.df}"
                )


def _t_densities(d: int, df: int, u: np.ndarray) -> np.ndarray:
    shape = (1.0 + u**2 / df) ** (-(df - 1) / 2.0)
    if d == 0:
        return _stats.t.sf(u, df)
    if d == 1:
        return shape / TWO_PI
    if d == 2:
        const = math.exp(
            math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0)
        ) / math.sqrt(df / 2.0)
        return const * u * shape / TWO_PI**1.5
    return ((df - 1) * u**2 / df - 1.0) * shape / TWO_PI**2


def _gaussian_densities(d: int, u: np.ndarray) -> np.ndarray:
    bump = np.exp(-(u**2) / 2.0)
    if d == 0:
        return _stats.norm.sf(u)
    if d == 1:
        return bump / TWO_PI
    if d == 2:
        return u * bump / TWO_PI**1.5
    return (u**2 - 1.0) * bump / TWO_PI**2


def ec_density(d: int, params: ECDensityParams, u):
    """EC density of dimension d at threshold u (scalar or array)."""
    if d not in (0, 1, 2, 3):
        raise ValueError(f"unsupported density dimension {d}")
    arr = np.asarray(u, dtype=float)
    if not np.isfinite(arr).all():
        raise ValueError("thresholds must be finite")
    if params.field_type == "t":
        out = _t_densities(d, params.df, arr)
    else:
        out = _gaussian_densities(d, arr)
    return float(out) if np.isscalar(u) else out


def eec(lkcs: LKCVector, params: ECDensityParams, u):
    """Expected Euler characteristic of the excursion set above u."""
    if lkcs.dim > 3:
        raise ValueError(f"densities cover dimensions 0..3, got {lkcs.dim}")
    arr = np.asarray(u, dtype=float)
    out = np.zeros(arr.shape, dtype=float)
    for d, value in enumerate(lkcs.values):
        if value != 0.0:
            out += value * ec_density(d, params, arr)
    return float(out) if np.isscalar(u) else out


def _start_quantile(params: ECDensityParams, target: float) -> float:
    if params.field_type == "t":
        return float(_stats.t.isf(target, params.df))
    return float(_stats.norm.isf(target))


def fwer_threshold(
    lkcs: LKCVector,
    params: ECDensityParams,
    alpha: float,
    tails: str = "two",
) -> float:
    """Threshold whose expected EC equals the error budget.

    Two-tailed control solves eec(u) = alpha/2, one-tailed
    eec(u) = alpha. The bracket starts at the matching t quantile and
    doubles upward until the expected EC falls below the target, then
    bisects; this lands on the largest root whenever the curve has
    entered its decreasing tail, which is the conservative choice when
    the curve is not monotone at low thresholds.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if tails not in ("one", "two"):
        raise ValueError(f"tails must be 'one' or 'two', got {tails!r}")
    target = alpha / 2.0 if tails == "two" else alpha
    lo = _start_quantile(params, target)
    if eec(lkcs, params, lo) < target:
        # Domains with vanishing low-order curvatures can sit below the
        # target already; walk down to recover a left bracket.
        step = 1.0
        found = False
        while lo > -60.0:
            lo -= step
            step *= 2.0
            if eec(lkcs, params, lo) >= target:
                found = True
                break
        if not found:
            raise ValueError("alpha too large for domain")
    hi = lo
    step = 1.0
    while eec(lkcs, params, hi) >= target:
        hi += step
        step *= 2.0
        if hi > 1e8:
            raise RuntimeError("no upper bracket for the threshold")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = eec(lkcs, params, mid)
        if abs(val - target) < 1e-10 and hi - lo < 1e-12:
            return mid
        if val >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

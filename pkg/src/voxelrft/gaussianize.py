"""Marginal Gaussianization of lattice observations via a pooled null.

The pooled null distribution collects the demeaned, variance-one
values of every subject at every voxel. Observations are standardized
without demeaning (so signal in the mean survives), mapped through the
pooled empirical distribution function, and pushed through the normal
quantile function.

Orientation note: `pooled_quantile` reports upper-tail mass,
q = #(pooled >= x) / M, which is the printed convention for the pooled
rank. The transform itself uses the ascending empirical CDF
q = #(pooled <= x) / M before applying the normal quantile, since the
transform must be increasing in x at every voxel; with the descending
convention the composition would reverse sign. Both counts are clamped
away from 0 and 1 by half a rank step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "PooledNull",
    "standardize",
    "standardize_demean",
    "pooled_null",
    "pooled_quantile",
    "gaussianize",
]


def _as_subject_matrix(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ValueError(
            f"expected a subjects-by-voxels matrix, got shape {data.shape}"
        )
    if data.shape[0] < 2:
        raise ValueError(
            f"need at least 2 subjects to standardize, got {data.shape[0]}"
        )
    return data


def _sample_sd(data: np.ndarray) -> np.ndarray:
    sd = data.std(axis=0, ddof=1)
    bad = np.flatnonzero(sd <= 0)
    if bad.size:
        raise ValueError(f"zero sample variance at voxel index {int(bad[0])}")
    return sd


def standardize_demean(data: np.ndarray) -> np.ndarray:
    """Per voxel: subtract the sample mean, divide by the sample sd
    (denominator N - 1)."""
    data = _as_subject_matrix(data)
    return (data - data.mean(axis=0)) / _sample_sd(data)


def standardize(data: np.ndarray) -> np.ndarray:
    """Per voxel: divide by the sample sd without demeaning."""
    data = _as_subject_matrix(data)
    return data / _sample_sd(data)


@dataclass(frozen=True)
class PooledNull:
    """Sorted pooled null values with their provenance counts."""

    values: np.ndarray  # ascending, length n_subjects * n_voxels
    n_subjects: int
    n_voxels: int

    @property
    def size(self) -> int:
        return self.values.size


def pooled_null(data: np.ndarray) -> PooledNull:
    """Pool the demeaned standardized values of all subjects and voxels."""
    data = _as_subject_matrix(data)
    flat = np.sort(standardize_demean(data), axis=None)
    return PooledNull(flat, data.shape[0], data.shape[1])


def pooled_quantile(null: PooledNull, x: np.ndarray) -> np.ndarray:
    """Upper-tail pooled rank q = #(pooled >= x) / M, clamped to
    [1/(2M), 1 - 1/(2M)]."""
    x = np.asarray(x, dtype=float)
    m = null.size
    count = m - np.searchsorted(null.values, x, side="left")
    q = count / m
    return np.clip(q, 1.0 / (2 * m), 1.0 - 1.0 / (2 * m))


def gaussianize(data: np.ndarray) -> np.ndarray:
    """Map observations through the pooled null to normal margins.

    Returns an array of the input shape. The map is increasing in the
    observation at every voxel, is invariant to rescaling the input by
    a positive constant, and leaves mean signal detectable because the
    standardization step does not demean.
    """
    data = _as_subject_matrix(data)
    null = pooled_null(data)
    xs = standardize(data)
    m = null.size
    count = np.searchsorted(null.values, xs, side="right")
    q = np.clip(count / m, 1.0 / (2 * m), 1.0 - 1.0 / (2 * m))
    return stats.norm.ppf(q)

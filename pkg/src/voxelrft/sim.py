"""Monte-Carlo harnesses validating the inference pipeline.

Four experiment drivers measure, over many replicates of synthetic
noise, the quantities the toolkit promises: curvature estimation bias,
familywise error of the threshold, mean Euler characteristic curves
against their closed form, and the sign of the smoothness-estimator
biases. A synthetic image bank with resampling stands in for studies
that draw subsamples from a fixed pool of subject maps.

Randomness is counter-based: every (seed, subject, replicate,
experiment) tuple owns a Philox stream, so results are bit-identical
regardless of worker count or evaluation order, and no two experiment
kinds ever share draws. The stream tags are stable constants; changing
them would silently re-randomize every archived result.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .densities import ECDensityParams, eec, fwer_threshold
from .euler import average_ec_curves, ec_curve
from .fields import (
    LatticeSample,
    TFieldEvaluator,
    fields_on_grid,
    grid_local_maxima,
    supremum_abs,
)
from .grid import Mask, build_voxel_manifold, integration_weights, refine
from .kernels import GaussianKernel, fwhm_to_sigma
from .lkc import (
    LKCVector,
    boundary_edge_length,
    fwhm_convolution,
    fwhm_forman,
    fwhm_kiebel,
    kiebel_lambda,
    lkc_l1_stationary_3d,
    lkc_top_two,
    lkcs_from_fwhm,
    true_lkcs,
)
from .tstats import lambda_hat, residual_fields, t_field

STREAM_TAGS = {
    "fwer": 1,
    "lkc": 2,
    "eec": 3,
    "fwhm": 4,
    "bank": 5,
    "profile": 6,
}

_DISTRIBUTIONS = ("gaussian", "student-t", "laplace")
_DEFAULT_LAPLACE_SCALE = 3.0
_FAILURE_BUDGET = 1e-3


@dataclass(frozen=True)
class NoiseSpec:
    """Marginal distribution, seed, and edge margin of the voxel noise.

    Student-t noise keeps its natural scale (variance df/(df-2));
    every consumer in the pipeline normalizes by the sample standard
    deviation, so the scale is immaterial and raw draws are the
    faithful choice. Laplace noise defaults to scale 3.
    """

    distribution: str = "gaussian"
    df: int | None = None
    scale: float | None = None
    seed: int = 0
    padding: int = 0

    def __post_init__(self) -> None:
        if self.distribution not in _DISTRIBUTIONS:
            raise ValueError(f"unknown noise distribution {self.distribution!r}")
        if self.distribution == "student-t":
            if self.df is None or self.df < 3:
                raise ValueError("t noise needs at least 3 degrees of freedom")
        elif self.df is not None:
            raise ValueError("df only applies to student-t noise")
        if self.distribution == "laplace":
            if self.scale is not None and self.scale <= 0:
                raise ValueError(f"scale must be positive, got {self.scale}")
        elif self.scale is not None:
            raise ValueError("scale only applies to laplace noise")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.padding < 0 or self.padding != int(self.padding):
            raise ValueError("padding must be a nonnegative integer")

    @property
    def laplace_scale(self) -> float:
        return _DEFAULT_LAPLACE_SCALE if self.scale is None else float(self.scale)


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid of settings shared by the experiment drivers."""

    mask: Mask
    n_subjects: tuple[int, ...]
    fwhm: tuple[float, ...]
    n_replicates: int
    noise: NoiseSpec
    resolutions: tuple[float, ...] = (0.0, 1.0, math.inf)
    alphas: tuple[float, ...] = (0.05,)
    gaussianize: tuple[bool, ...] = (False,)
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "n_subjects", tuple(int(n) for n in self.n_subjects))
        object.__setattr__(self, "fwhm", tuple(float(f) for f in self.fwhm))
        object.__setattr__(
            self, "resolutions", tuple(float(r) for r in self.resolutions)
        )
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "gaussianize", tuple(bool(g) for g in self.gaussianize))
        for name in ("n_subjects", "fwhm", "resolutions", "alphas", "gaussianize"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if any(n < 3 for n in self.n_subjects):
            raise ValueError("need at least 3 subjects")
        if any(f <= 0 for f in self.fwhm):
            raise ValueError("fwhm values must be positive")
        if any(r not in (0.0, 1.0, math.inf) for r in self.resolutions):
            raise ValueError(
                "supported added resolutions are 0, 1, and inf (continuum)"
            )
        if not all(0.0 < a < 1.0 for a in self.alphas):
            raise ValueError("alpha levels must lie in (0, 1)")
        if self.n_replicates < 1:
            raise ValueError("need at least one replicate")
        if self.workers < 1:
            raise ValueError("need at least one worker")


def _stream(seed: int, subject: int, replicate: int, experiment: str):
    bits = np.random.Philox(
        key=seed, counter=[0, subject, replicate, STREAM_TAGS[experiment]]
    )
    return np.random.Generator(bits)


def _draw(spec: NoiseSpec, rng, count: int) -> np.ndarray:
    if spec.distribution == "gaussian":
        return rng.standard_normal(count)
    if spec.distribution == "student-t":
        return rng.standard_t(spec.df, count)
    return rng.laplace(0.0, spec.laplace_scale, count)


def pad_mask(mask: Mask, margin: int) -> Mask:
    """Mask grown by `margin` voxels in every direction (box dilation)."""
    if margin == 0:
        return mask
    inc = np.pad(mask.inclusion, margin)
    structure = np.ones((2 * margin + 1,) * mask.ndim, dtype=bool)
    return Mask(ndimage.binary_dilation(inc, structure=structure), mask.spacing)


def generate_noise(
    mask: Mask,
    spec: NoiseSpec,
    n_subjects: int,
    replicate: int = 0,
    experiment: str = "fwer",
) -> LatticeSample:
    """One replicate of i.i.d. voxel noise on the (padded) lattice.

    Each subject draws from its own counter stream, so the images do
    not depend on how replicates are partitioned across workers.
    """
    padded = pad_mask(mask, spec.padding)
    data = np.empty((n_subjects, padded.n_voxels))
    for i in range(n_subjects):
        data[i] = _draw(spec, _stream(spec.seed, i, replicate, experiment), padded.n_voxels)
    return LatticeSample(padded, data)


def _map(fn, count: int, workers: int) -> list:
    if workers <= 1:
        return [fn(j) for j in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _run_replicates(fn, count: int, workers: int, label: str):
    """Run replicates, excluding failures up to the 0.1 percent budget."""

    def guarded(j: int):
        try:
            return fn(j)
        except Exception as exc:
            return f"replicate {j}: {exc}"

    outs = _map(guarded, count, workers)
    good = [o for o in outs if not isinstance(o, str)]
    failed = count - len(good)
    if failed > _FAILURE_BUDGET * count:
        first = next(o for o in outs if isinstance(o, str))
        raise RuntimeError(
            f"{failed} of {count} {label} replicates failed; first failure: {first}"
        )
    return good, failed


def _require_unpadded(spec: NoiseSpec, label: str) -> None:
    if spec.padding != 0:
        raise ValueError(
            f"the {label} experiment uses the masked-convolution convention; "
            "set padding to 0"
        )


def _conv_lkcs(lam: np.ndarray, grid, chi: float) -> LKCVector:
    """Curvature vector from the pointwise covariance field."""
    l_dm1, l_d = lkc_top_two(lam, grid)
    if grid.ndim == 1:
        return LKCVector((l_dm1, l_d), "conv")
    if grid.ndim == 2:
        return LKCVector((chi, l_dm1, l_d), "conv")
    l_1 = lkc_l1_stationary_3d(lam, grid)
    return LKCVector((chi, l_1, l_dm1, l_d), "conv")


# ---------------------------------------------------------------------------
# familywise error


@dataclass(frozen=True)
class FWERRow:
    n_subjects: int
    fwhm: float
    resolution: float
    gaussianized: bool
    alpha: float
    fwer: float
    stderr: float
    ci_low: float
    ci_high: float
    mean_maxima: float


@dataclass(frozen=True)
class FWERReport:
    rows: tuple[FWERRow, ...]
    n_replicates: int
    n_failed: int

    def table(self) -> list[dict]:
        return [
            {
                "n_subjects": row.n_subjects,
                "fwhm": row.fwhm,
                "resolution": row.resolution,
                "gaussianized": int(row.gaussianized),
                "alpha": row.alpha,
                "fwer": row.fwer,
                "stderr": row.stderr,
                "ci_low": row.ci_low,
                "ci_high": row.ci_high,
                "mean_maxima": row.mean_maxima,
            }
            for row in self.rows
        ]


def run_fwer_experiment(config: ExperimentConfig, bank: "Bank | None" = None) -> FWERReport:
    """Rejection rate of the estimated threshold under null noise.

    Per replicate the pipeline runs end to end: noise (or a bank
    subsample), optional marginal transform, convolution fields at
    added resolution 1, t field, curvature estimate, two-sided
    threshold, then the supremum of |T| over the requested point sets
    (0: voxel centres, 1: the refined grid, inf: continuum optimizer).
    The suprema are nested, so per replicate the rejection indicators
    are monotone in the resolution by construction. mean_maxima counts
    the super-threshold local maxima on the resolution-1 grid.
    """
    mask = config.mask
    spec = config.noise
    _require_unpadded(spec, "familywise-error")
    if bank is not None and not (
        bank.mask.dims == mask.dims
        and np.array_equal(bank.mask.inclusion, mask.inclusion)
    ):
        raise ValueError("bank and config use different masks")
    manifold = build_voxel_manifold(mask)
    chi = float(manifold.euler_characteristic)
    rows: list[FWERRow] = []
    total_failed = 0

    for fwhm in config.fwhm:
        kernel = GaussianKernel(fwhm, mask.spacing)
        grid = integration_weights(refine(mask, 1))
        center_ids = grid.voxel_center_point_ids()
        for n in config.n_subjects:
            indices = None
            if bank is not None:
                indices = resample_bank(bank, n, config.n_replicates, spec.seed)
            for gz in config.gaussianize:

                def one(j: int):
                    if indices is None:
                        sample = generate_noise(mask, spec, n, j, "fwer")
                    else:
                        sample = LatticeSample(mask, bank.images[indices[j]])
                    fields = fields_on_grid(
                        sample, kernel, grid, gaussianize=gz, gradients=True
                    )
                    tf = t_field(fields)
                    lam = lambda_hat(residual_fields(fields))
                    lkcs = _conv_lkcs(lam, grid, chi)
                    params = ECDensityParams(n - 1)
                    thr = {
                        a: fwer_threshold(lkcs, params, a) for a in config.alphas
                    }
                    abs_t = np.abs(tf.values)
                    sup = {
                        0.0: float(abs_t[center_ids].max()),
                        1.0: float(abs_t.max()),
                    }
                    if math.inf in config.resolutions:
                        ev = TFieldEvaluator(sample, kernel, gaussianize=gz)
                        sup[math.inf] = supremum_abs(ev, grid, values=tf.values)
                        if sup[math.inf] < sup[1.0]:
                            raise RuntimeError(
                                "optimizer supremum fell below the grid maximum"
                            )
                    peak_ids = grid_local_maxima(grid, abs_t)
                    maxima = {
                        a: int((abs_t[peak_ids] > thr[a]).sum())
                        for a in config.alphas
                    }
                    return sup, thr, maxima

                good, failed = _run_replicates(
                    one, config.n_replicates, config.workers, "familywise-error"
                )
                total_failed += failed
                for res in config.resolutions:
                    for a in config.alphas:
                        rej = np.array(
                            [sup[res] > thr[a] for sup, thr, _ in good], dtype=float
                        )
                        p = float(rej.mean())
                        se = math.sqrt(p * (1.0 - p) / rej.size)
                        counts = np.array([m[a] for _, _, m in good], dtype=float)
                        rows.append(
                            FWERRow(
                                n, fwhm, res, gz, a, p, se,
                                p - 1.96 * se, p + 1.96 * se,
                                float(counts.mean()),
                            )
                        )
    return FWERReport(tuple(rows), config.n_replicates, total_failed)


# ---------------------------------------------------------------------------
# curvature bias


@dataclass(frozen=True)
class LKCSettingResult:
    n_subjects: int
    fwhm: float
    gaussianized: bool
    orders: tuple[int, ...]
    true_values: tuple[float, ...]
    relative_bias: np.ndarray  # (replicates kept, len(orders))
    n_failed: int


@dataclass(frozen=True)
class LKCReport:
    settings: tuple[LKCSettingResult, ...]
    n_replicates: int

    def table(self) -> list[dict]:
        rows = []
        for s in self.settings:
            for j, biases in enumerate(s.relative_bias):
                for order, bias in zip(s.orders, biases):
                    rows.append(
                        {
                            "n_subjects": s.n_subjects,
                            "fwhm": s.fwhm,
                            "gaussianized": int(s.gaussianized),
                            "order": order,
                            "replicate": j,
                            "relative_bias": float(bias),
                        }
                    )
        return rows


def run_lkc_experiment(config: ExperimentConfig, r_dense: int = 21) -> LKCReport:
    """Relative bias of the convolution curvature estimator.

    Estimates run at added resolution 1; the reference values use the
    exact covariance of the convolution field on an r_dense grid. The
    report keeps every replicate's relative bias so downstream plots
    can show the spread rather than a single summary.
    """
    mask = config.mask
    spec = config.noise
    _require_unpadded(spec, "curvature-bias")
    manifold = build_voxel_manifold(mask)
    chi = float(manifold.euler_characteristic)
    ndim = mask.ndim
    orders = tuple(range(1, ndim + 1))
    settings: list[LKCSettingResult] = []

    for fwhm in config.fwhm:
        kernel = GaussianKernel(fwhm, mask.spacing)
        grid = integration_weights(refine(mask, 1))
        truth = true_lkcs(kernel, mask, r_dense=r_dense)
        true_tail = np.array([truth.values[d] for d in orders])
        for n in config.n_subjects:
            for gz in config.gaussianize:

                def one(j: int):
                    sample = generate_noise(mask, spec, n, j, "lkc")
                    fields = fields_on_grid(
                        sample, kernel, grid, gaussianize=gz, gradients=True
                    )
                    lam = lambda_hat(residual_fields(fields))
                    est = _conv_lkcs(lam, grid, chi)
                    est_tail = np.array([est.values[d] for d in orders])
                    return (est_tail - true_tail) / true_tail

                good, failed = _run_replicates(
                    one, config.n_replicates, config.workers, "curvature-bias"
                )
                settings.append(
                    LKCSettingResult(
                        n, fwhm, gz, orders,
                        tuple(float(v) for v in true_tail),
                        np.asarray(good), failed,
                    )
                )
    return LKCReport(tuple(settings), config.n_replicates)


# ---------------------------------------------------------------------------
# expected Euler characteristic curves


@dataclass(frozen=True)
class EECSettingResult:
    n_subjects: int
    fwhm: float
    gaussianized: bool
    thresholds: np.ndarray
    empirical: np.ndarray
    stderr: np.ndarray
    theory: dict[str, np.ndarray]
    lkcs: dict[str, LKCVector]
    n_failed: int


@dataclass(frozen=True)
class EECReport:
    settings: tuple[EECSettingResult, ...]
    n_replicates: int

    def table(self) -> list[dict]:
        rows = []
        for s in self.settings:
            for i, u in enumerate(s.thresholds):
                row = {
                    "n_subjects": s.n_subjects,
                    "fwhm": s.fwhm,
                    "gaussianized": int(s.gaussianized),
                    "u": float(u),
                    "empirical": float(s.empirical[i]),
                    "stderr": float(s.stderr[i]),
                }
                for method, curve in s.theory.items():
                    row[method] = float(curve[i])
                rows.append(row)
        return rows


def run_eec_experiment(
    config: ExperimentConfig, thresholds=None
) -> EECReport:
    """Mean observed EC curve against the closed form per estimator.

    Per replicate the t field's EC curve is evaluated on a shared
    threshold vector, and the three curvature estimates (convolution,
    and the two lattice width estimators) are recorded. The theoretical
    curves plug the across-replicate mean curvatures into the expected
    EC formula, one curve per estimator.
    """
    mask = config.mask
    spec = config.noise
    _require_unpadded(spec, "mean-curve")
    if thresholds is None:
        thresholds = np.linspace(-3.0, 5.0, 33)
    thresholds = np.asarray(thresholds, dtype=float)
    manifold = build_voxel_manifold(mask)
    chi = float(manifold.euler_characteristic)
    ndim = mask.ndim
    edge = boundary_edge_length(mask) if ndim == 3 else None
    settings: list[EECSettingResult] = []

    for fwhm in config.fwhm:
        kernel = GaussianKernel(fwhm, mask.spacing)
        grid = integration_weights(refine(mask, 1))
        center_ids = grid.voxel_center_point_ids()
        for n in config.n_subjects:
            for gz in config.gaussianize:

                def one(j: int):
                    sample = generate_noise(mask, spec, n, j, "eec")
                    fields = fields_on_grid(
                        sample, kernel, grid, gaussianize=gz, gradients=True
                    )
                    tf = t_field(fields)
                    res = residual_fields(fields)
                    lam = lambda_hat(res)
                    conv = _conv_lkcs(lam, grid, chi)
                    lattice_res = res.values[:, center_ids]
                    lat_lam = kiebel_lambda(lattice_res, mask)
                    widths = {
                        "kiebel": fwhm_kiebel(lat_lam),
                        "forman": fwhm_forman(lat_lam),
                    }
                    curve = ec_curve(tf, thresholds)
                    return curve, conv, widths

                good, failed = _run_replicates(
                    one, config.n_replicates, config.workers, "mean-curve"
                )
                mean_curve = average_ec_curves([c for c, _, _ in good])
                params = ECDensityParams(n - 1)
                mean_conv = np.mean(
                    [np.array(c.values) for _, c, _ in good], axis=0
                )
                lkc_by_method = {
                    "convolution": LKCVector(tuple(mean_conv), "conv")
                }
                for method in ("kiebel", "forman"):
                    width = float(np.mean([w[method] for _, _, w in good]))
                    lkc_by_method[method] = lkcs_from_fwhm(
                        width,
                        manifold.volume,
                        manifold.boundary_area,
                        ndim,
                        edge_length=edge,
                        euler_characteristic=chi,
                    )
                theory = {
                    method: np.asarray(eec(v, params, thresholds))
                    for method, v in lkc_by_method.items()
                }
                settings.append(
                    EECSettingResult(
                        n, fwhm, gz, thresholds,
                        np.asarray(mean_curve.values),
                        np.asarray(mean_curve.stderr),
                        theory, lkc_by_method, failed,
                    )
                )
    return EECReport(tuple(settings), config.n_replicates)


# ---------------------------------------------------------------------------
# smoothness estimator bias


@dataclass(frozen=True)
class FWHMSettingResult:
    n_subjects: int
    fwhm: float
    bias: dict[str, np.ndarray]  # estimator -> (replicates kept,)
    n_failed: int


@dataclass(frozen=True)
class FWHMReport:
    settings: tuple[FWHMSettingResult, ...]
    n_replicates: int

    def table(self) -> list[dict]:
        rows = []
        for s in self.settings:
            for estimator, biases in s.bias.items():
                for j, bias in enumerate(biases):
                    rows.append(
                        {
                            "n_subjects": s.n_subjects,
                            "fwhm": s.fwhm,
                            "estimator": estimator,
                            "replicate": j,
                            "bias": float(bias),
                        }
                    )
        return rows


def run_fwhm_experiment(config: ExperimentConfig) -> FWHMReport:
    """Bias of the three kernel-width estimators under edge correction.

    Noise is generated on the mask grown by ceil(4 sigma), smoothed
    there, and cropped back, so the retained voxels see a stationary
    field; the estimators then run exactly as they would on real data
    of the original extent. The margin is derived per kernel, so the
    noise spec must not carry its own padding.
    """
    mask = config.mask
    spec = config.noise
    if spec.padding != 0:
        raise ValueError(
            "the width-bias experiment derives its margin from each kernel; "
            "set padding to 0"
        )
    settings: list[FWHMSettingResult] = []

    for fwhm in config.fwhm:
        kernel = GaussianKernel(fwhm, mask.spacing)
        margin = math.ceil(4.0 * fwhm_to_sigma(fwhm))
        padded = pad_mask(mask, margin)
        run_spec = replace(spec, padding=margin)
        grid0 = refine(padded, 0)
        central = np.flatnonzero(
            np.pad(mask.inclusion, margin)[padded.inclusion]
        )
        for n in config.n_subjects:

            def one(j: int):
                sample = generate_noise(mask, run_spec, n, j, "fwhm")
                fields = fields_on_grid(sample, kernel, grid0, gradients=True)
                res = residual_fields(fields)
                conv = fwhm_convolution(res, center_ids=central)
                lat_lam = kiebel_lambda(res.values[:, central], mask)
                return {
                    "convolution": conv - fwhm,
                    "kiebel": fwhm_kiebel(lat_lam) - fwhm,
                    "forman": fwhm_forman(lat_lam) - fwhm,
                }

            good, failed = _run_replicates(
                one, config.n_replicates, config.workers, "width-bias"
            )
            bias = {
                estimator: np.array([g[estimator] for g in good])
                for estimator in ("convolution", "kiebel", "forman")
            }
            settings.append(FWHMSettingResult(n, fwhm, bias, failed))
    return FWHMReport(tuple(settings), config.n_replicates)


# ---------------------------------------------------------------------------
# synthetic image bank


@dataclass(frozen=True)
class Bank:
    """Pool of mean-zero lattice images to draw subsamples from."""

    mask: Mask
    images: np.ndarray  # (n_total, n_included_voxels)

    def __post_init__(self) -> None:
        images = np.ascontiguousarray(np.asarray(self.images, dtype=float))
        if images.ndim != 2 or images.shape[1] != self.mask.n_voxels:
            raise ValueError(
                f"bank images have shape {images.shape}, expected "
                f"(n, {self.mask.n_voxels})"
            )
        if images.shape[0] < 1:
            raise ValueError("bank holds no images")
        object.__setattr__(self, "images", images)

    @property
    def n_total(self) -> int:
        return self.images.shape[0]


def make_synthetic_bank(
    n_total: int,
    mask: Mask,
    spec: NoiseSpec,
    scale: np.ndarray | None = None,
    tail_weight: np.ndarray | None = None,
) -> Bank:
    """Bank of independent mean-zero images with optional heterogeneity.

    scale multiplies each voxel's draw, giving variance heterogeneity
    across the lattice. tail_weight in [0, 1] mixes a standard normal
    (0) with the spec's distribution (1) per voxel, so tail heaviness
    can vary across voxels while the mean stays zero.
    """
    if n_total < 1:
        raise ValueError("bank needs at least one image")
    p = mask.n_voxels
    if scale is not None:
        scale = np.asarray(scale, dtype=float)
        if scale.shape != (p,):
            raise ValueError(f"scale must have shape ({p},), got {scale.shape}")
        if (scale <= 0).any():
            raise ValueError("scale entries must be positive")
    if tail_weight is not None:
        tail_weight = np.asarray(tail_weight, dtype=float)
        if tail_weight.shape != (p,):
            raise ValueError(
                f"tail_weight must have shape ({p},), got {tail_weight.shape}"
            )
        if ((tail_weight < 0) | (tail_weight > 1)).any():
            raise ValueError("tail_weight entries must lie in [0, 1]")
    images = np.empty((n_total, p))
    for i in range(n_total):
        rng = _stream(spec.seed, i, 0, "bank")
        if tail_weight is None:
            img = _draw(spec, rng, p)
        else:
            base = rng.standard_normal(p)
            heavy = _draw(spec, rng, p)
            img = (1.0 - tail_weight) * base + tail_weight * heavy
        if scale is not None:
            img = img * scale
        images[i] = img
    return Bank(mask, images)


def resample_bank(bank: Bank, n_subjects: int, n_draws: int, seed: int) -> np.ndarray:
    """(n_draws, n_subjects) with-replacement index lists, seeded.

    Warns when subsamples exceed 5 percent of the bank, the point at
    which distinct subsamples share enough images to correlate.
    """
    if n_subjects < 1:
        raise ValueError("subsamples need at least one image")
    if n_subjects > bank.n_total:
        raise ValueError(
            f"subsample size {n_subjects} exceeds the bank ({bank.n_total})"
        )
    if n_subjects > 0.05 * bank.n_total:
        warnings.warn(
            f"subsample size {n_subjects} is more than 5 percent of the "
            f"bank ({bank.n_total}); subsamples will overlap noticeably",
            RuntimeWarning,
            stacklevel=2,
        )
    rng = _stream(seed, 0, 1, "bank")
    return rng.integers(0, bank.n_total, size=(n_draws, n_subjects))


def write_csv(path, rows: list[dict]) -> None:
    """Write dict rows with a header; all rows share the first row's keys."""
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

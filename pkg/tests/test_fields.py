from __future__ import annotations

import numpy as np
import pytest

from voxelrft import Mask, refine, solid_mask
from voxelrft.fields import (
    ConvolutionEvaluator,
    LatticeSample,
    TFieldEvaluator,
    eval_convolution,
    fields_on_grid,
    find_field_maximum,
    grid_local_maxima,
    smooth_on_grid,
    supremum_abs,
)
from voxelrft.kernels import GaussianKernel, eval_kernel


def brute_force_field(row: np.ndarray, mask: Mask, kernel, points: np.ndarray):
    """Direct truncated sum over included voxels, one point at a time."""
    centers = mask.voxel_centers()
    out = np.empty(points.shape[0])
    for i, p in enumerate(points):
        out[i] = float(np.dot(eval_kernel(kernel, p - centers), row))
    return out


def make_sample(seed: int, dims=(10, 11), n=8) -> LatticeSample:
    mask = solid_mask(dims)
    rng = np.random.default_rng(seed)
    return LatticeSample(mask, rng.standard_normal((n, mask.n_voxels)))


class TestGridSmoothing:
    def test_delta_input_reproduces_kernel(self):
        mask = solid_mask((9, 9))
        k = GaussianKernel(3.0, mask.spacing)
        row = np.zeros(mask.n_voxels)
        row[np.flatnonzero((mask.voxel_indices() == [4, 4]).all(axis=1))[0]] = 1.0
        grid = refine(mask, 2)
        vals, grads = smooth_on_grid(mask.full_from_included(row), k, grid)
        expect = eval_kernel(k, grid.points - np.array([4.0, 4.0]))
        assert np.allclose(vals, expect, rtol=1e-12, atol=1e-15)

    def test_matches_brute_force_at_grid_points(self):
        sample = make_sample(0, dims=(7, 6), n=1)
        k = GaussianKernel(2.8, sample.mask.spacing)
        grid = refine(sample.mask, 1)
        vals, _ = smooth_on_grid(sample.full_data(), k, grid)
        brute = brute_force_field(sample.data[0], sample.mask, k, grid.points)
        assert np.allclose(vals[0], brute, rtol=1e-11, atol=1e-13)

    def test_voxel_centers_equal_lattice_smoothing(self):
        # Values at voxel centres must equal the plain discrete
        # convolution of the lattice data with kernel samples.
        sample = make_sample(1, dims=(8, 8), n=1)
        k = GaussianKernel(3.0, sample.mask.spacing)
        grid = refine(sample.mask, 0)
        vals, _ = smooth_on_grid(sample.full_data(), k, grid, gradients=False)
        centers = sample.mask.voxel_centers()
        lattice = brute_force_field(sample.data[0], sample.mask, k, centers)
        assert np.allclose(vals[0], lattice, rtol=1e-11, atol=1e-13)

    def test_linearity(self):
        mask = solid_mask((6, 6))
        k = GaussianKernel(2.5, mask.spacing)
        grid = refine(mask, 1)
        rng = np.random.default_rng(2)
        x = rng.standard_normal(mask.n_voxels)
        y = rng.standard_normal(mask.n_voxels)
        a, b = 1.3, -0.4
        vx, _ = smooth_on_grid(mask.full_from_included(x), k, grid, gradients=False)
        vy, _ = smooth_on_grid(mask.full_from_included(y), k, grid, gradients=False)
        vxy, _ = smooth_on_grid(
            mask.full_from_included(a * x + b * y), k, grid, gradients=False
        )
        assert np.allclose(vxy, a * vx + b * vy, rtol=1e-12, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        sample = make_sample(3, dims=(9, 9), n=1)
        k = GaussianKernel(3.0, sample.mask.spacing)
        rng = np.random.default_rng(4)
        pts = rng.uniform(2.0, 6.0, size=(30, 2))
        vals, grads = eval_convolution(
            sample.data[0], sample.mask, k, pts, gradients=True
        )
        eps = 1e-6
        for d in range(2):
            step = np.zeros(2)
            step[d] = eps
            up = eval_convolution(sample.data[0], sample.mask, k, pts + step)
            dn = eval_convolution(sample.data[0], sample.mask, k, pts - step)
            assert np.allclose((up - dn) / (2 * eps), grads[:, d], atol=1e-6)


class TestPointEvaluation:
    def test_matches_brute_force_off_lattice(self):
        sample = make_sample(5, dims=(8, 7), n=1)
        k = GaussianKernel(3.2, sample.mask.spacing)
        rng = np.random.default_rng(6)
        pts = np.column_stack(
            [rng.uniform(-0.49, 7.49, 40), rng.uniform(-0.49, 6.49, 40)]
        )
        got = eval_convolution(sample.data[0], sample.mask, k, pts)
        brute = brute_force_field(sample.data[0], sample.mask, k, pts)
        assert np.allclose(got, brute, rtol=1e-11, atol=1e-13)

    def test_unsupported_point(self):
        mask = solid_mask((5, 5))
        k = GaussianKernel(2.0, mask.spacing)
        row = np.ones(mask.n_voxels)
        far = np.array([[200.0, 200.0]])
        with pytest.raises(ValueError, match="unsupported point"):
            eval_convolution(row, mask, k, far)

    def test_masked_out_voxels_do_not_contribute(self):
        inc = np.ones((7, 7), dtype=bool)
        inc[3, 3] = False
        mask = Mask(inc, (1.0, 1.0))
        k = GaussianKernel(2.5, mask.spacing)
        rng = np.random.default_rng(7)
        row = rng.standard_normal(mask.n_voxels)
        pts = np.array([[3.2, 2.9], [0.0, 0.0]])
        got = eval_convolution(row, mask, k, pts)
        brute = brute_force_field(row, mask, k, pts)
        assert np.allclose(got, brute, rtol=1e-11, atol=1e-13)

    def test_evaluator_agrees_with_grid_path(self):
        sample = make_sample(8, dims=(9, 8), n=6)
        k = GaussianKernel(3.0, sample.mask.spacing)
        grid = refine(sample.mask, 1)
        vals, grads = smooth_on_grid(sample.full_data(), k, grid)
        ev = ConvolutionEvaluator(sample, k, chunk=17)
        pv, pg = ev(grid.points)
        assert np.allclose(pv, vals, rtol=1e-9, atol=1e-12)
        assert np.allclose(pg, grads, rtol=1e-9, atol=1e-12)

    def test_3d_point_evaluation(self):
        mask = solid_mask((5, 4, 6))
        rng = np.random.default_rng(9)
        row = rng.standard_normal(mask.n_voxels)
        k = GaussianKernel(2.2, mask.spacing)
        pts = np.column_stack(
            [rng.uniform(0, 4, 10), rng.uniform(0, 3, 10), rng.uniform(0, 5, 10)]
        )
        got = eval_convolution(row, mask, k, pts)
        brute = brute_force_field(row, mask, k, pts)
        assert np.allclose(got, brute, rtol=1e-11, atol=1e-13)

    def test_bit_determinism(self):
        sample = make_sample(10)
        k = GaussianKernel(3.0, sample.mask.spacing)
        ev = TFieldEvaluator(sample, k)
        pts = np.array([[2.2, 3.3], [5.1, 4.4]])
        t1, g1 = ev(pts)
        t2, g2 = ev(pts)
        assert np.array_equal(t1, t2) and np.array_equal(g1, g2)


class TestFieldsOnGrid:
    def test_returns_one_field_per_subject(self):
        sample = make_sample(11, n=5)
        k = GaussianKernel(3.0, sample.mask.spacing)
        grid = refine(sample.mask, 1)
        fields = fields_on_grid(sample, k, grid)
        assert len(fields) == 5
        assert fields[0].values.shape == (grid.n_points,)
        assert fields[0].gradient.shape == (grid.n_points, 2)

    def test_mask_mismatch_rejected(self):
        sample = make_sample(12)
        k = GaussianKernel(3.0, sample.mask.spacing)
        other = refine(solid_mask((4, 4)), 1)
        with pytest.raises(ValueError, match="different masks"):
            fields_on_grid(sample, k, other)

    def test_gaussianize_flag_changes_fields(self):
        rng = np.random.default_rng(13)
        mask = solid_mask((8, 8))
        sample = LatticeSample(mask, rng.standard_t(3, size=(9, mask.n_voxels)))
        k = GaussianKernel(3.0, mask.spacing)
        grid = refine(mask, 0)
        raw = fields_on_grid(sample, k, grid, gradients=False)
        gau = fields_on_grid(sample, k, grid, gaussianize=True, gradients=False)
        assert not np.allclose(raw[0].values, gau[0].values)


class TestLocalMaxima:
    def test_single_bump(self):
        mask = solid_mask((9, 9))
        k = GaussianKernel(3.0, mask.spacing)
        row = np.zeros(mask.n_voxels)
        row[np.flatnonzero((mask.voxel_indices() == [4, 4]).all(axis=1))[0]] = 1.0
        grid = refine(mask, 1)
        vals, _ = smooth_on_grid(mask.full_from_included(row), k, grid, gradients=False)
        ids = grid_local_maxima(grid, vals)
        assert ids.size == 1
        assert np.allclose(grid.points[ids[0]], [4.0, 4.0])

    def test_plateau_keeps_all_points(self):
        grid = refine(solid_mask((3, 3)), 0)
        ids = grid_local_maxima(grid, np.zeros(grid.n_points))
        assert ids.size == grid.n_points


class TestOptimizer:
    def test_requires_refined_grid(self):
        sample = make_sample(14)
        k = GaussianKernel(3.0, sample.mask.spacing)
        ev = TFieldEvaluator(sample, k)
        with pytest.raises(ValueError, match="r >= 1"):
            find_field_maximum(ev, refine(sample.mask, 0))

    def test_finds_analytic_bump_peak(self):
        mask = solid_mask((9, 9))
        k = GaussianKernel(3.0, mask.spacing)
        center = np.array([3.7, 4.2])

        def bump(points):
            disp = points - center
            vals = eval_kernel(k, disp)
            grads = vals[:, None] * (-disp / np.array(k.sigma) ** 2)
            return vals, grads

        grid = refine(mask, 1)
        vals, _ = bump(grid.points)
        res = find_field_maximum(bump, grid, values=vals)
        peak = float(eval_kernel(k, np.zeros((1, 2)))[0])
        assert res.value == pytest.approx(peak, rel=1e-9)
        assert np.allclose(res.location, center, atol=1e-5)

    def test_never_below_grid_maximum(self):
        for seed in range(5):
            sample = make_sample(seed, dims=(11, 10), n=10)
            k = GaussianKernel(3.0, sample.mask.spacing)
            grid = refine(sample.mask, 1)
            ev = TFieldEvaluator(sample, k)
            tvals, _ = ev(grid.points)
            res = find_field_maximum(ev, grid, values=tvals)
            assert res.value >= tvals.max() - 1e-12

    def test_agrees_with_dense_grid_oracle(self):
        sample = make_sample(42, dims=(10, 10), n=12)
        k = GaussianKernel(3.5, sample.mask.spacing)
        ev = TFieldEvaluator(sample, k)
        res = find_field_maximum(ev, refine(sample.mask, 1))
        dense = refine(sample.mask, 21)
        dvals, _ = ev(dense.points)
        dense_max = dvals.max()
        assert res.value >= dense_max - 1e-12
        assert res.value - dense_max <= 1e-4 * abs(dense_max)

    def test_boundary_maximum_converges(self):
        # A bump centred outside the domain puts the constrained
        # maximum on the boundary face nearest the centre.
        mask = solid_mask((8, 8))
        k = GaussianKernel(3.0, mask.spacing)
        center = np.array([9.4, 4.2])

        def bump(points):
            disp = points - center
            vals = eval_kernel(k, disp)
            grads = vals[:, None] * (-disp / np.array(k.sigma) ** 2)
            return vals, grads

        grid = refine(mask, 1)
        vals, _ = bump(grid.points)
        res = find_field_maximum(bump, grid, values=vals)
        assert res.location[0] == pytest.approx(7.5, abs=1e-9)
        assert res.location[1] == pytest.approx(4.2, abs=1e-5)
        expect = bump(np.array([[7.5, 4.2]]))[0][0]
        assert res.value == pytest.approx(expect, rel=1e-10)

    def test_resolution_monotonicity(self):
        sample = make_sample(77, dims=(10, 10), n=9)
        k = GaussianKernel(3.0, sample.mask.spacing)
        ev = TFieldEvaluator(sample, k)
        maxima = []
        for r in (0, 1, 2, 3):
            grid = refine(sample.mask, r)
            tvals, _ = ev(grid.points)
            maxima.append(tvals.max())
        assert maxima == sorted(maxima)
        res = find_field_maximum(ev, refine(sample.mask, 1))
        assert res.value >= maxima[-1] - 1e-12

    def test_supremum_abs_covers_both_signs(self):
        sample = make_sample(15, dims=(10, 9), n=8)
        k = GaussianKernel(3.0, sample.mask.spacing)
        grid = refine(sample.mask, 1)
        ev = TFieldEvaluator(sample, k)
        tvals, _ = ev(grid.points)
        sup = supremum_abs(ev, grid, values=tvals)
        assert sup >= np.abs(tvals).max() - 1e-12
        flipped = LatticeSample(sample.mask, -sample.data)
        ev2 = TFieldEvaluator(flipped, k)
        sup2 = supremum_abs(ev2, grid, values=-tvals)
        assert sup == pytest.approx(sup2, rel=1e-12)

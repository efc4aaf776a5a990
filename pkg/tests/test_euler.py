import numpy as np
import pytest

from _oracles import chi_excursion_floodfill
from voxelrft import Mask, build_voxel_manifold, refine, solid_mask
from voxelrft.euler import ECCurve, average_ec_curves, ec_curve, excursion_ec
from voxelrft.fields import LatticeSample, ScalarField, fields_on_grid
from voxelrft.kernels import GaussianKernel, eval_kernel


def smooth_field(seed, dims=(10, 10), fwhm=3.0, r=1):
    mask = solid_mask(dims)
    rng = np.random.default_rng(seed)
    sample = LatticeSample(mask, rng.standard_normal((1, mask.n_voxels)))
    k = GaussianKernel(fwhm, mask.spacing)
    return fields_on_grid(sample, k, refine(mask, r), gradients=False)[0]


def oracle_chi(field, u):
    lattice = field.grid.lattice_from_points(field.values, fill=-np.inf)
    return chi_excursion_floodfill(lattice >= u)


class TestExcursionEC:
    def test_whole_domain_is_contractible(self):
        f = smooth_field(0)
        assert excursion_ec(f, f.values.min() - 1.0) == 1

    def test_empty_excursion(self):
        f = smooth_field(1)
        assert excursion_ec(f, f.values.max() + 1.0) == 0

    def test_two_bumps(self):
        mask = solid_mask((30, 12))
        k = GaussianKernel(3.0, mask.spacing)
        grid = refine(mask, 1)
        bumps = eval_kernel(k, grid.points - [7.0, 5.5]) + eval_kernel(
            k, grid.points - [22.0, 5.5]
        )
        f = ScalarField(grid, bumps / bumps.max())
        assert excursion_ec(f, 0.5) == 2

    def test_annulus_is_a_loop(self):
        mask = solid_mask((17, 17))
        grid = refine(mask, 1)
        radius = np.linalg.norm(grid.points - [8.0, 8.0], axis=1)
        f = ScalarField(grid, -np.abs(radius - 5.0))
        assert excursion_ec(f, -1.5) == 0
        assert oracle_chi(f, -1.5) == 0

    def test_matches_floodfill_oracle_on_random_fields(self):
        for seed in range(40):
            f = smooth_field(seed, dims=(9, 8), fwhm=2.5)
            for q in (0.2, 0.5, 0.8, 0.95):
                u = np.quantile(f.values, q)
                assert excursion_ec(f, u) == oracle_chi(f, u)

    def test_low_level_reproduces_manifold_characteristic(self):
        inc = np.ones((7, 7), dtype=bool)
        inc[2:5, 2:5] = False
        mask = Mask(inc, (1.0, 1.0))
        grid = refine(mask, 1)
        f = ScalarField(grid, np.zeros(grid.n_points))
        assert (
            excursion_ec(f, -1.0)
            == build_voxel_manifold(mask).euler_characteristic
            == 0
        )

    def test_3d_shell_has_characteristic_two(self):
        inc = np.ones((4, 4, 4), dtype=bool)
        inc[1:3, 1:3, 1:3] = False
        mask = Mask(inc, (1.0, 1.0, 1.0))
        grid = refine(mask, 1)
        f = ScalarField(grid, np.ones(grid.n_points))
        assert excursion_ec(f, 0.0) == 2

    def test_refinement_stability(self):
        mask = solid_mask((10, 10))
        rng = np.random.default_rng(7)
        sample = LatticeSample(mask, rng.standard_normal((1, mask.n_voxels)))
        k = GaussianKernel(3.0, mask.spacing)
        fields = {
            r: fields_on_grid(sample, k, refine(mask, r), gradients=False)[0]
            for r in (1, 3)
        }
        for q in (0.3, 0.6, 0.9):
            u = np.quantile(fields[1].values, q) + 1e-4
            assert excursion_ec(fields[1], u) == excursion_ec(fields[3], u)


class TestECCurve:
    def test_constant_field_steps_once(self):
        grid = refine(solid_mask((5, 5)), 1)
        f = ScalarField(grid, np.full(grid.n_points, 2.0))
        curve = ec_curve(f, thresholds=[1.0, 2.0, 3.0])
        assert list(curve.values) == [1.0, 1.0, 0.0]

    def test_translation_equivariance(self):
        f = smooth_field(3)
        delta = 0.37
        shifted = ScalarField(f.grid, f.values + delta)
        u = np.quantile(f.values, 0.7)
        a = ec_curve(f, thresholds=[u]).values[0]
        b = ec_curve(shifted, thresholds=[u + delta]).values[0]
        assert a == b

    def test_monotone_increase_grows_excursion(self):
        f = smooth_field(4)
        g = ScalarField(f.grid, f.values + np.abs(f.values) * 0.1)
        for q in (0.25, 0.75):
            u = np.quantile(f.values, q)
            assert np.all((f.values >= u) <= (g.values >= u))

    def test_default_thresholds_bounded(self):
        f = smooth_field(5)
        curve = ec_curve(f)
        assert curve.thresholds.size <= 512
        assert np.all(np.diff(curve.thresholds) > 0)
        assert curve.values[0] == 1.0
        assert excursion_ec(f, curve.thresholds[-1] + 1e-9) == 0

    def test_validation(self):
        with pytest.raises(ValueError, match="ascending"):
            ECCurve(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        with pytest.raises(ValueError, match="values"):
            ECCurve(np.array([1.0, 2.0]), np.array([0.0]))


class TestAverage:
    def test_identical_copies_average_to_themselves(self):
        f = smooth_field(6)
        curve = ec_curve(f)
        out = average_ec_curves([curve] * 5)
        assert np.array_equal(out.values, curve.values)
        assert np.all(out.stderr == 0.0)

    def test_hand_mean(self):
        t = np.array([0.0, 1.0])
        a = ECCurve(t, np.array([0.0, 0.0]))
        b = ECCurve(t, np.array([2.0, 2.0]))
        out = average_ec_curves([a, b])
        assert np.array_equal(out.values, [1.0, 1.0])
        assert np.allclose(out.stderr, 1.0)

    def test_mismatched_thresholds_rejected(self):
        a = ECCurve(np.array([0.0, 1.0]), np.zeros(2))
        b = ECCurve(np.array([0.0, 2.0]), np.zeros(2))
        with pytest.raises(ValueError, match="different thresholds"):
            average_ec_curves([a, b])

    def test_single_curve(self):
        a = ECCurve(np.array([0.0, 1.0]), np.array([3.0, 1.0]))
        out = average_ec_curves([a])
        assert np.array_equal(out.values, a.values)
        assert np.all(out.stderr == 0.0)

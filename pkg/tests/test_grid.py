from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voxelrft import Mask, build_voxel_manifold, refine, solid_mask

from _oracles import chi_mask_floodfill


def random_mask_2d(seed: int, nx: int, ny: int, density: float) -> Mask:
    rng = np.random.default_rng(seed)
    inc = rng.random((nx, ny)) < density
    if not inc.any():
        inc[nx // 2, ny // 2] = True
    return Mask(inc, (1.0, 1.0))


class TestMask:
    def test_empty_domain_rejected(self):
        with pytest.raises(ValueError, match="empty domain"):
            Mask(np.zeros((3, 3), dtype=bool), (1.0, 1.0))

    def test_bad_spacing_rejected(self):
        with pytest.raises(ValueError, match="spacing"):
            Mask(np.ones((2, 2), dtype=bool), (1.0, -1.0))
        with pytest.raises(ValueError, match="spacing"):
            Mask(np.ones((2, 2), dtype=bool), (1.0,))

    def test_four_axes_rejected(self):
        with pytest.raises(ValueError, match="axes"):
            Mask(np.ones((2, 2, 2, 2), dtype=bool), (1.0,) * 4)

    def test_scatter_gather_roundtrip(self):
        mask = random_mask_2d(7, 6, 5, 0.5)
        vals = np.arange(mask.n_voxels, dtype=float)
        full = mask.full_from_included(vals)
        assert np.array_equal(mask.included_from_full(full), vals)


class TestManifoldSummary:
    def test_solid_rectangle(self):
        summary = build_voxel_manifold(solid_mask((40, 40)))
        assert summary.volume == pytest.approx(1600.0)
        assert summary.boundary_area == pytest.approx(160.0)
        assert summary.euler_characteristic == 1

    def test_ring_has_chi_zero(self):
        # 3x3 frame with the centre removed.
        inc = np.ones((3, 3), dtype=bool)
        inc[1, 1] = False
        summary = build_voxel_manifold(Mask(inc, (1.0, 1.0)))
        assert summary.euler_characteristic == 0
        assert summary.volume == pytest.approx(8.0)
        assert summary.boundary_area == pytest.approx(12.0 + 4.0)
        assert chi_mask_floodfill(inc) == 0

    def test_spacing_scales_measures(self):
        summary = build_voxel_manifold(solid_mask((10, 5), spacing=(2.0, 0.5)))
        assert summary.volume == pytest.approx(50.0)
        assert summary.boundary_area == pytest.approx(2 * 5 * 0.5 + 2 * 10 * 2.0)

    def test_two_components(self):
        inc = np.zeros((5, 5), dtype=bool)
        inc[0, 0] = True
        inc[3:, 3:] = True
        summary = build_voxel_manifold(Mask(inc, (1.0, 1.0)))
        assert summary.euler_characteristic == 2

    def test_1d_components(self):
        inc = np.array([True, True, False, True, False, True])
        summary = build_voxel_manifold(Mask(inc, (1.0,)))
        assert summary.euler_characteristic == 3
        assert summary.volume == pytest.approx(4.0)
        assert summary.boundary_area == pytest.approx(6.0)

    def test_3d_solid_and_shell(self):
        assert build_voxel_manifold(solid_mask((3, 4, 5))).euler_characteristic == 1
        shell = np.ones((3, 3, 3), dtype=bool)
        shell[1, 1, 1] = False
        assert (
            build_voxel_manifold(Mask(shell, (1.0,) * 3)).euler_characteristic == 2
        )

    def test_3d_solid_torus(self):
        ring = np.ones((3, 3), dtype=bool)
        ring[1, 1] = False
        inc = np.repeat(ring[:, :, None], 2, axis=2)
        assert build_voxel_manifold(Mask(inc, (1.0,) * 3)).euler_characteristic == 0

    def test_chi_matches_floodfill_on_random_masks(self):
        for seed in range(60):
            mask = random_mask_2d(seed, 7, 8, 0.45)
            summary = build_voxel_manifold(mask)
            assert summary.euler_characteristic == chi_mask_floodfill(
                mask.inclusion
            ), f"seed {seed}"


class TestRefine:
    def test_single_voxel_r1_has_27_points(self):
        grid = refine(solid_mask((1, 1, 1)), 1)
        assert grid.n_points == 27

    def test_adjacent_1d_voxels_share_boundary_point(self):
        grid = refine(solid_mask((2,)), 1)
        assert grid.n_points == 5
        assert np.allclose(grid.points[:, 0], [-0.5, 0.0, 0.5, 1.0, 1.5])

    def test_r0_points_are_voxel_centers(self):
        mask = random_mask_2d(3, 5, 4, 0.6)
        grid = refine(mask, 0)
        assert np.allclose(grid.points, mask.voxel_centers())

    def test_points_lexicographically_sorted(self):
        grid = refine(solid_mask((3, 2)), 2)
        order = np.lexsort(grid.points.T[::-1])
        assert np.array_equal(order, np.arange(grid.n_points))

    def test_even_r_point_count(self):
        # No shared points for even r: (r + 1) per voxel per axis.
        grid = refine(solid_mask((4, 3)), 2)
        assert grid.n_points == (4 * 3) * (3 * 3)

    def test_negative_r_rejected(self):
        with pytest.raises(ValueError, match="added resolution"):
            refine(solid_mask((2, 2)), -1)

    def test_voxel_center_ids(self):
        grid = refine(solid_mask((1, 1, 1)), 1)
        ids = grid.voxel_center_point_ids()
        assert ids.shape == (1,)
        assert np.allclose(grid.points[ids[0]], [0.0, 0.0, 0.0])

    def test_refinement_nesting(self):
        # r = 1 points are a subset of r = 3 points.
        mask = random_mask_2d(11, 4, 4, 0.7)
        coarse = refine(mask, 1)
        fine = refine(mask, 3)
        fine_set = {tuple(np.round(p, 9)) for p in fine.points}
        assert all(tuple(np.round(p, 9)) in fine_set for p in coarse.points)


class TestIntegrationWeights:
    def test_unit_voxel_r1_weights_tile_the_voxel(self):
        grid = refine(solid_mask((1, 1, 1)), 1)
        w = grid.volume_weights
        assert w.sum() == pytest.approx(1.0, rel=1e-12)
        # Cells of side 1/2 clipped to the box: corner keeps one octant.
        corner = np.flatnonzero((grid.index == 0).all(axis=1))[0]
        assert w[corner] == pytest.approx(1.0 / 64.0, rel=1e-12)
        center = grid.voxel_center_point_ids()[0]
        assert w[center] == pytest.approx(0.125, rel=1e-12)

    def test_weight_sum_equals_volume(self):
        for seed, r in [(0, 0), (1, 1), (2, 2), (3, 3), (4, 1)]:
            mask = random_mask_2d(seed, 6, 7, 0.5)
            grid = refine(mask, r)
            volume = build_voxel_manifold(mask).volume
            assert grid.volume_weights.sum() == pytest.approx(volume, rel=1e-10)

    def test_weight_sum_equals_volume_3d(self):
        rng = np.random.default_rng(5)
        inc = rng.random((4, 3, 4)) < 0.5
        inc[2, 1, 2] = True
        mask = Mask(inc, (1.0, 2.0, 0.5))
        for r in (0, 1, 2):
            grid = refine(mask, r)
            volume = build_voxel_manifold(mask).volume
            assert grid.volume_weights.sum() == pytest.approx(volume, rel=1e-10)

    def test_weights_positive_and_bounded(self):
        mask = random_mask_2d(9, 5, 5, 0.5)
        for r in (0, 1, 2):
            grid = refine(mask, r)
            cell = np.prod([h / (r + 1) for h in mask.spacing])
            assert (grid.volume_weights > 0).all()
            assert (grid.volume_weights <= cell + 1e-15).all()

    def test_face_weights_sum_to_boundary_area(self):
        inc = np.ones((3, 3), dtype=bool)
        inc[1, 1] = False
        mask = Mask(inc, (1.0, 1.0))
        summary = build_voxel_manifold(mask)
        for r in (1, 3, 5):
            grid = refine(mask, r)
            total = sum(w.sum() for _, w in grid.face_sets.values())
            assert total == pytest.approx(summary.boundary_area, rel=1e-10)

    def test_even_r_has_no_face_points(self):
        # Even r places every point strictly inside a voxel box.
        grid = refine(solid_mask((3, 3)), 2)
        assert all(ids.size == 0 for ids, _ in grid.face_sets.values())

    def test_face_weights_per_plane_class_unit_voxel(self):
        grid = refine(solid_mask((1, 1, 1)), 1)
        assert set(grid.face_sets) == {(0, 1), (0, 2), (1, 2)}
        for tangent, (ids, w) in grid.face_sets.items():
            assert w.sum() == pytest.approx(2.0, rel=1e-12)
            assert ids.size == 18

    def test_face_points_lie_on_boundary(self):
        mask = random_mask_2d(21, 6, 6, 0.5)
        grid = refine(mask, 1)
        for tangent, (ids, w) in grid.face_sets.items():
            (normal,) = tuple(set(range(2)) - set(tangent))
            coords = grid.points[ids][:, normal]
            # Boundary points sit on half-integer coordinates.
            assert np.allclose(np.round(coords + 0.5) - 0.5, coords)

    def test_1d_component_endpoints(self):
        inc = np.array([True, True, False, True])
        grid = refine(Mask(inc, (2.0,)), 1)
        assert np.allclose(grid.component_endpoints, [[-1.0, 3.0], [5.0, 7.0]])


@given(st.integers(0, 10**6), st.integers(2, 6), st.integers(2, 6),
       st.integers(0, 3))
def test_weight_partition_property(seed, nx, ny, r):
    mask = random_mask_2d(seed, nx, ny, 0.5)
    grid = refine(mask, r)
    volume = build_voxel_manifold(mask).volume
    assert grid.volume_weights.sum() == pytest.approx(volume, rel=1e-10)
    total_faces = sum(w.sum() for _, w in grid.face_sets.values())
    if r % 2 == 1:
        assert total_faces == pytest.approx(
            build_voxel_manifold(mask).boundary_area, rel=1e-10
        )

import numpy as np
import pytest

from pocketforge import kernels
from pocketforge.kernels import nearest_sq, voxel_counts


class TestNearest:
    def test_matches_dense_search(self, rng):
        a = rng.standard_normal((300, 3))
        b = rng.standard_normal((200, 3))
        dist, index = nearest_sq(a, b)
        dense = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(index, dense.argmin(axis=1))
        np.testing.assert_allclose(dist, dense.min(axis=1), rtol=1e-12)

    def test_ties_pick_lowest_index(self):
        a = np.zeros((1, 3))
        b = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
        _, index = nearest_sq(a, b)
        assert index[0] == 0

    def test_numpy_path_agrees(self, rng):
        a = rng.standard_normal((2500, 3))
        b = rng.standard_normal((70, 3))
        dist, index = nearest_sq(a, b)
        out_dist = np.empty(a.shape[0])
        out_index = np.empty(a.shape[0], dtype=np.int64)
        kernels._nearest_numpy(a, b, out_dist, out_index)
        np.testing.assert_array_equal(out_index, index)
        np.testing.assert_array_equal(out_dist, dist)


class TestVoxelCounts:
    def test_counts_sum_to_points(self, rng):
        pts = rng.uniform(-1, 1, size=(500, 3))
        counts, clamped = voxel_counts(pts, 28)
        assert counts.shape == (28**3,)
        assert counts.sum() == 500
        assert clamped == 0

    def test_boundary_and_clamping(self):
        pts = np.array(
            [[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0], [1.5, 0.0, 0.0]]
        )
        counts, clamped = voxel_counts(pts, 4)
        assert clamped == 1
        assert counts[-1] == 1
        assert counts[0] == 1
        # x clamped to the last slab, y and z in the middle voxels
        assert counts[(3 * 4 + 2) * 4 + 2] == 1

    @pytest.mark.parametrize("grid", [1, 5, 28])
    def test_numpy_path_agrees(self, rng, grid):
        pts = rng.uniform(-1.3, 1.3, size=(400, 3))
        counts, clamped = voxel_counts(pts, grid)
        fallback = np.zeros(grid**3)
        n = kernels._voxel_counts_numpy(pts, grid, fallback)
        np.testing.assert_array_equal(fallback, counts)
        assert n == clamped

    @pytest.mark.parametrize("scale", [1e20, -1e20])
    def test_huge_coordinates_land_in_boundary_voxel(self, scale):
        pts = np.full((1, 3), scale)
        expected = 4**3 - 1 if scale > 0 else 0
        counts, clamped = voxel_counts(pts, 4)
        assert clamped == 1
        assert counts[expected] == 1
        fallback = np.zeros(4**3)
        assert kernels._voxel_counts_numpy(pts, 4, fallback) == 1
        assert fallback[expected] == 1

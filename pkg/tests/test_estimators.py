import math

import numpy as np
import pytest

from geomfit.core import Correspondence, Homography, MapPoint, Plane
from geomfit.estimators import (
    DegenerateFitError,
    fit_homography_lsq,
    fit_homography_minimal,
    fit_plane_lsq,
    fit_plane_minimal,
    model_residual,
    model_residuals,
    plane_distances,
    point_plane_distance,
    sample_localized,
    sample_uniform,
    ste,
    ste_residuals,
)
from geomfit.neighbors import GridIndex


def apply_homography(matrix: np.ndarray, xy: np.ndarray) -> np.ndarray:
    h = np.hstack([xy, np.ones((len(xy), 1))]) @ matrix.T
    return h[:, :2] / h[:, 2:3]


def random_homography(rng: np.random.Generator) -> np.ndarray:
    # mild perspective so points stay well in front of the plane at infinity
    m = np.eye(3)
    m[:2, :2] += rng.normal(0, 0.1, (2, 2))
    m[:2, 2] = rng.uniform(-30, 30, 2)
    m[2, :2] = rng.normal(0, 1e-4, 2)
    return m


class TestSte:
    def test_identity_zero(self):
        c = Correspondence((10.0, 20.0), (10.0, 20.0))
        assert ste(Homography(np.eye(3)), c) == pytest.approx(0.0, abs=1e-12)

    def test_exact_translation_zero(self):
        h = Homography(np.array([[1, 0, 5], [0, 1, 0], [0, 0, 1]], dtype=float))
        c = Correspondence((0.0, 0.0), (5.0, 0.0))
        assert ste(h, c) == pytest.approx(0.0, abs=1e-12)

    def test_one_pixel_each_way(self):
        # 1 px forward error and 1 px backward error combine to sqrt(2)
        h = Homography(np.array([[1, 0, 5], [0, 1, 0], [0, 0, 1]], dtype=float))
        c = Correspondence((0.0, 0.0), (6.0, 0.0))
        assert ste(h, c) == pytest.approx(math.sqrt(2.0))

    def test_plane_at_infinity_gives_inf(self):
        h = Homography(np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 1]], dtype=float))
        # w = 1 - x vanishes at x = 1
        r = ste_residuals(h, np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]))
        assert np.isinf(r[0])

    def test_symmetry_under_inversion_and_swap(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            h = Homography(random_homography(rng))
            ref = rng.uniform(0, 100, 2)
            cur = rng.uniform(0, 100, 2)
            fwd = ste(h, Correspondence(ref, cur))
            bwd = ste(h.inverse(), Correspondence(cur, ref))
            assert fwd == pytest.approx(bwd, rel=1e-9)


class TestPlaneDistance:
    def test_axis_plane(self):
        plane = Plane((0.0, 0, 1.0), 0.0)
        assert point_plane_distance(plane, MapPoint((0.0, 0, 2.0))) == pytest.approx(2.0)

    def test_on_plane(self):
        plane = Plane((0.0, 0, 1.0), -1.0)
        assert point_plane_distance(plane, MapPoint((5.0, 3.0, 1.0))) == pytest.approx(0.0)

    def test_formula_divides_by_norm(self):
        # raw-equation form with an un-normalized normal
        d = plane_distances((0.0, 0.0, 2.0), 0.0, np.array([[0.0, 0.0, 2.0]]))
        assert d[0] == pytest.approx(2.0)


class TestHomographyFits:
    def test_minimal_recovers_known_homography(self):
        rng = np.random.default_rng(0)
        truth = random_homography(rng)
        ref = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]]) * 100.0
        cur = apply_homography(truth, ref)
        model = fit_homography_minimal((ref, cur))
        assert model is not None
        residuals = ste_residuals(model, ref, cur)
        assert residuals.max() < 1e-8

    def test_minimal_collinear_is_degenerate(self):
        ref = np.array([[0.0, 0], [1, 1], [2, 2], [5, 0]])
        cur = np.array([[0.0, 0], [1, 1], [2, 2], [5, 0]])
        assert fit_homography_minimal((ref, cur)) is None

    def test_minimal_identity_on_generic_points(self):
        pts = np.array([[0.0, 0], [100, 10], [40, 90], [80, 70]])
        model = fit_homography_minimal((pts, pts))
        scaled = model.matrix / model.matrix[2, 2]
        assert np.allclose(scaled, np.eye(3), atol=1e-9)

    def test_minimal_interpolates_its_sample(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            ref = rng.uniform(0, 640, (4, 2))
            cur = rng.uniform(0, 480, (4, 2))
            model = fit_homography_minimal((ref, cur))
            if model is None:
                continue
            assert ste_residuals(model, ref, cur).max() < 1e-8

    def test_lsq_exact_inliers(self):
        rng = np.random.default_rng(1)
        truth = random_homography(rng)
        ref = rng.uniform(0, 640, (40, 2))
        cur = apply_homography(truth, ref)
        model = fit_homography_lsq((ref, cur))
        assert ste_residuals(model, ref, cur).max() < 1e-8

    def test_lsq_four_points_matches_minimal(self):
        rng = np.random.default_rng(2)
        ref = rng.uniform(0, 640, (4, 2))
        cur = rng.uniform(0, 480, (4, 2))
        minimal = fit_homography_minimal((ref, cur))
        lsq = fit_homography_lsq((ref, cur))
        assert np.allclose(minimal.matrix, lsq.matrix, atol=1e-12)

    def test_lsq_noisy_rms(self):
        rng = np.random.default_rng(3)
        truth = random_homography(rng)
        ref = rng.uniform(0, 640, (100, 2))
        cur = apply_homography(truth, ref) + rng.normal(0, 0.5, (100, 2))
        model = fit_homography_lsq((ref, cur))
        rms = float(np.sqrt(np.mean(ste_residuals(model, ref, cur) ** 2)))
        assert rms <= 1.0

    def test_lsq_degenerate_raises(self):
        line = np.column_stack([np.linspace(0, 10, 8), np.linspace(0, 10, 8)])
        with pytest.raises(DegenerateFitError):
            fit_homography_lsq((line, line))


class TestPlaneFits:
    def test_minimal_xy_plane_canonical(self):
        plane = fit_plane_minimal(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]))
        assert np.allclose(plane.normal, [0, 0, 1])
        assert plane.offset == pytest.approx(0.0)

    def test_minimal_collinear_degenerate(self):
        assert fit_plane_minimal(np.array([[0.0, 0, 0], [1, 1, 1], [2, 2, 2]])) is None

    def test_minimal_interpolates(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            pts = rng.normal(0, 1, (3, 3))
            plane = fit_plane_minimal(pts)
            if plane is None:
                continue
            assert plane_distances(plane.normal, plane.offset, pts).max() < 1e-9
            assert plane.offset >= 0.0  # canonical form

    def test_lsq_z_equals_one_canonicalized(self):
        rng = np.random.default_rng(6)
        pts = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50), np.ones(50)])
        plane = fit_plane_lsq(pts)
        assert np.allclose(plane.normal, [0, 0, -1], atol=1e-12)
        assert plane.offset == pytest.approx(1.0)

    def test_lsq_noisy_normal_angle(self):
        rng = np.random.default_rng(7)
        normal = np.array([1.0, 2.0, 3.0])
        normal /= np.linalg.norm(normal)
        basis_u = np.cross(normal, [0, 0, 1.0])
        basis_u /= np.linalg.norm(basis_u)
        basis_v = np.cross(normal, basis_u)
        coeffs = rng.uniform(-1, 1, (200, 2))
        pts = 0.7 * normal + coeffs[:, :1] * basis_u + coeffs[:, 1:] * basis_v
        pts += rng.normal(0, 0.005, pts.shape)
        plane = fit_plane_lsq(pts)
        angle = math.degrees(math.acos(min(1.0, abs(float(plane.normal @ normal)))))
        assert angle < 1.0

    def test_lsq_three_points_matches_minimal(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(0, 1, (3, 3))
        minimal = fit_plane_minimal(pts)
        lsq = fit_plane_lsq(pts)
        assert np.allclose(minimal.normal, lsq.normal, atol=1e-9)
        assert minimal.offset == pytest.approx(lsq.offset, abs=1e-9)

    def test_lsq_beats_coarse_grid_search(self):
        # grid over azimuth/elevation at 0.5 degrees with the offset solved in
        # closed form then snapped to the 0.001 grid
        rng = np.random.default_rng(9)
        pts = rng.normal(0, 1, (5, 3))
        plane = fit_plane_lsq(pts)
        lsq_sse = float(np.sum(plane_distances(plane.normal, plane.offset, pts) ** 2))
        assert lsq_sse <= grid_search_sse(pts) + 1e-6


def grid_search_sse(pts: np.ndarray, step_deg: float = 0.5, d_step: float = 0.001) -> float:
    az = np.deg2rad(np.arange(-180.0, 180.0, step_deg))
    el = np.deg2rad(np.arange(-90.0, 90.0 + step_deg, step_deg))
    azg, elg = np.meshgrid(az, el, indexing="ij")
    normals = np.stack([
        np.cos(elg) * np.cos(azg), np.cos(elg) * np.sin(azg), np.sin(elg)
    ], axis=-1).reshape(-1, 3)
    proj = normals @ pts.T                      # (n_normals, n_pts)
    d_opt = -proj.mean(axis=1)
    d_snap = np.round(d_opt / d_step) * d_step
    sse = np.sum((proj + d_snap[:, None]) ** 2, axis=1)
    return float(sse.min())


class TestSamplers:
    def test_uniform_exact_pool(self):
        rng = np.random.default_rng(0)
        sample = sample_uniform(3, 3, rng)
        assert sorted(sample.point_ids) == [0, 1, 2]

    def test_uniform_too_small_pool(self):
        with pytest.raises(ValueError):
            sample_uniform(2, 3, np.random.default_rng(0))

    def test_uniform_inclusion_frequency(self):
        # m = 3 of 10: inclusion probability 0.3 per point over 1e5 draws
        rng = np.random.default_rng(42)
        draws = 100_000
        counts = np.zeros(10)
        for _ in range(draws):
            for idx in sample_uniform(10, 3, rng).point_ids:
                counts[idx] += 1
        p = 0.3
        sigma = math.sqrt(p * (1 - p) / draws)
        freq = counts / draws
        assert np.all(np.abs(freq - p) < 3 * sigma + 1e-12)

    def test_localized_single_cell_is_uniform(self):
        rng = np.random.default_rng(1)
        grid = GridIndex((640, 480), 8)
        pts = np.array([[10.0 + i, 10.0] for i in range(6)])  # all in one cell
        draws = 20_000
        counts = np.zeros(6)
        for _ in range(draws):
            for idx in sample_localized(pts, grid, 3, rng).point_ids:
                counts[idx] += 1
        p = 0.5  # 3 of 6
        sigma = math.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(counts / draws - p) < 4 * sigma)

    def test_localized_prefers_near_cells(self):
        rng = np.random.default_rng(2)
        grid = GridIndex((800, 800), 8)
        # anchor cluster of 5 in one cell plus 40 far points
        near = np.array([[50.0 + i, 50.0] for i in range(5)])
        far = np.column_stack([np.full(40, 750.0), np.linspace(20, 780, 40)])
        pts = np.vstack([near, far])
        near_rate = 0
        draws = 2000
        for _ in range(draws):
            ids = sample_localized(pts, grid, 3, rng).point_ids
            if ids[0] < 5 and all(i < 5 for i in ids[1:]):
                near_rate += 1
        # anchors land in the near cluster 1/9 of the time and then stay local
        assert near_rate / draws > 0.05

    def test_localized_pool_of_m(self):
        rng = np.random.default_rng(3)
        grid = GridIndex((100, 100), 4)
        pts = np.array([[10.0, 10], [90, 90], [90, 10], [10, 90]])
        sample = sample_localized(pts, grid, 4, rng)
        assert sorted(sample.point_ids) == [0, 1, 2, 3]


class TestModelResidual:
    def test_all_on_model(self):
        plane = Plane((0.0, 0, 1.0), 0.0)
        pts = np.array([[0.0, 0, 0], [1, 1, 0], [2, 0, 0]])
        assert model_residual(plane, pts, 0.02) == pytest.approx(0.0)

    def test_no_inliers_gives_inf(self):
        plane = Plane((0.0, 0, 1.0), 0.0)
        pts = np.array([[0.0, 0, 5], [1, 1, 5], [2, 0, 5]])
        assert model_residual(plane, pts, 0.02) == float("inf")

    def test_mean_of_inliers_only(self):
        plane = Plane((0.0, 0, 1.0), 0.0)
        pts = np.array([[0.0, 0, 0.01], [1, 0, 0.03], [2, 0, 0.005], [3, 0, 0.0]])
        # distances 0.01, 0.03 (outlier at gate 0.02), 0.005, 0.0
        assert model_residual(plane, pts, 0.02) == pytest.approx((0.01 + 0.005 + 0.0) / 3)

    def test_under_supported_sentinel(self):
        plane = Plane((0.0, 0, 1.0), 0.0)
        pts = np.array([[0.0, 0, 0.0], [1, 0, 0.0], [2, 0, 5.0], [3, 0, 5.0]])
        assert model_residual(plane, pts, 0.02) == float("inf")  # 2 inliers < m = 3

    def test_homography_family(self):
        h = Homography(np.eye(3))
        ref = np.array([[0.0, 0], [10, 0], [0, 10], [10, 10]])
        r = model_residuals(h, (ref, ref))
        assert np.allclose(r, 0.0, atol=1e-12)
        assert model_residual(h, (ref, ref), 2.0) == pytest.approx(0.0)

import math

import numpy as np
import pytest

from geomfit.core import (
    Correspondence,
    DataFormatError,
    FitConfig,
    Homography,
    MapPoint,
    Plane,
    SegmentationPrior,
    SphericalPlane,
    load_config,
    plane_to_spherical,
    scale_thresholds_mono,
    scale_thresholds_rgbd,
    spherical_to_plane,
)
from conftest import fibonacci_sphere


class TestTypes:
    def test_correspondence_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Correspondence(ref_point=(np.nan, 0.0), cur_point=(0.0, 0.0))

    def test_correspondence_rejects_negative_label(self):
        with pytest.raises(ValueError):
            Correspondence(ref_point=(0, 0), cur_point=(0, 0), prior_label=-2)

    def test_mappoint_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            MapPoint(position=(0.0, np.inf, 0.0))

    def test_homography_normalizes_bottom_right(self):
        h = Homography(2.0 * np.eye(3))
        assert h.matrix[2, 2] == 1.0

    def test_homography_unit_frobenius_when_corner_zero(self):
        m = np.array([[0, 0, 1], [0, 1, 0], [1, 0, 0]], dtype=float)  # invertible, H[2,2] == 0
        h = Homography(m)
        assert np.linalg.norm(h.matrix) == pytest.approx(1.0)

    def test_homography_rejects_singular(self):
        with pytest.raises(ValueError):
            Homography(np.array([[1, 0, 0], [1, 0, 0], [0, 0, 1]], dtype=float))

    def test_plane_joint_normalization_preserves_distances(self):
        p = Plane((0.0, 0.0, 2.0), -2.0)  # z = 1 plane, scaled equation
        assert np.allclose(p.normal, [0, 0, 1])
        assert p.offset == pytest.approx(-1.0)

    def test_plane_canonicalized_offset_sign(self):
        p = Plane((0.0, 0.0, 1.0), -1.0).canonicalized()
        assert p.offset == pytest.approx(1.0)
        assert np.allclose(p.normal, [0, 0, -1])

    def test_plane_canonicalized_zero_offset(self):
        p = Plane((0.0, 0.0, -1.0), 0.0).canonicalized()
        assert np.allclose(p.normal, [0, 0, 1])

    def test_segmentation_prior_counts_instances(self):
        prior = SegmentationPrior([0, 1, 1, -1, 0])
        assert prior.instance_count == 2
        assert len(prior) == 5

    def test_segmentation_prior_rejects_gappy_ids(self):
        with pytest.raises(ValueError):
            SegmentationPrior([0, 2, 2])


class TestConfig:
    def test_published_defaults(self):
        cfg = FitConfig()
        assert cfg.spatial_weight_homography == 0.975
        assert cfg.spatial_weight_plane == 0.6
        assert cfg.ste_threshold == 2.0
        assert cfg.confidence == 0.99
        assert cfg.grid_cells_per_axis == 8
        assert cfg.max_outer_iterations == 50
        assert cfg.distance_threshold == 0.02
        assert cfg.plane_residual_threshold == 0.01
        assert cfg.normal_parallel_threshold == 0.8
        assert cfg.offset_merge_threshold == pytest.approx(10 * cfg.distance_threshold)
        assert cfg.neighbor_radius == pytest.approx(2 * cfg.distance_threshold)
        assert cfg.min_plane_support == 20
        assert cfg.pairwise_weight == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            FitConfig(spatial_weight_plane=1.5)
        with pytest.raises(ValueError):
            FitConfig(confidence=1.0)
        with pytest.raises(ValueError):
            FitConfig(distance_threshold=0.0)

    def test_scale_identity(self):
        cfg = scale_thresholds_mono(FitConfig(), 1.0)
        assert cfg.distance_threshold == 0.02
        assert cfg.plane_residual_threshold == 0.01

    def test_scale_mono_proportional(self):
        cfg = scale_thresholds_mono(FitConfig(), 2.0)
        assert cfg.distance_threshold == pytest.approx(0.04)
        assert cfg.plane_residual_threshold == pytest.approx(0.02)
        assert cfg.offset_merge_threshold == pytest.approx(0.4)
        assert cfg.neighbor_radius == pytest.approx(0.08)
        assert cfg.spatial_weight_plane == 0.6  # untouched

    def test_scale_mono_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            scale_thresholds_mono(FitConfig(), 0.0)

    def test_scale_rgbd_unit_norms(self):
        pts = fibonacci_sphere(32)  # all at distance 1
        cfg = scale_thresholds_rgbd(FitConfig(), pts)
        assert cfg.distance_threshold == pytest.approx(0.02)

    def test_scale_rgbd_mean_of_norms(self):
        pts = np.array([[3.0, 0, 0], [0, 1.0, 0]])
        cfg = scale_thresholds_rgbd(FitConfig(), pts)
        assert cfg.distance_threshold == pytest.approx(0.04)

    def test_scale_rgbd_rejects_empty(self):
        with pytest.raises(ValueError):
            scale_thresholds_rgbd(FitConfig(), np.empty((0, 3)))

    def test_scaling_composes_multiplicatively(self):
        cfg = FitConfig()
        once = scale_thresholds_mono(scale_thresholds_mono(cfg, 1.5), 2.0)
        direct = scale_thresholds_mono(cfg, 3.0)
        assert once.distance_threshold == pytest.approx(direct.distance_threshold)
        assert once.neighbor_radius == pytest.approx(direct.neighbor_radius)


class TestSpherical:
    def test_axis_aligned(self):
        sph = plane_to_spherical(Plane((1.0, 0, 0), 0.5))
        assert sph.azimuth == pytest.approx(0.0)
        assert sph.elevation == pytest.approx(0.0)
        assert sph.offset == pytest.approx(0.5)

    def test_pole_convention(self):
        sph = plane_to_spherical(Plane((0.0, 0, 1.0), 1.0))
        assert sph.azimuth == 0.0  # atan2(0, 0) convention
        assert sph.elevation == pytest.approx(math.pi / 2)

    def test_round_trip_quasi_random(self):
        for normal in fibonacci_sphere(1000):
            plane = Plane(normal, 0.3)
            back = spherical_to_plane(plane_to_spherical(plane))
            assert np.linalg.norm(back.normal - plane.normal) < 1e-9
            assert back.offset == pytest.approx(plane.offset, abs=1e-12)

    def test_round_trip_from_spherical_away_from_poles(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            sph = SphericalPlane(
                azimuth=float(rng.uniform(-math.pi + 1e-6, math.pi)),
                elevation=float(rng.uniform(-math.pi / 2 + 1e-6, math.pi / 2 - 1e-6)),
                offset=float(rng.normal()),
            )
            again = plane_to_spherical(spherical_to_plane(sph))
            assert again.azimuth == pytest.approx(sph.azimuth, abs=1e-9)
            assert again.elevation == pytest.approx(sph.elevation, abs=1e-9)


class TestConfigFile:
    def test_round_trip_overrides(self, tmp_path):
        path = tmp_path / "fit.cfg"
        path.write_text(
            "# tuned for a far scene\n"
            "distance_threshold = 0.05\n"
            "min_plane_support = 12\n"
            "enable_local_opt = false\n",
            encoding="utf-8",
        )
        cfg = load_config(path)
        assert cfg.distance_threshold == 0.05
        assert cfg.min_plane_support == 12
        assert cfg.enable_local_opt is False
        assert cfg.confidence == 0.99  # untouched default

    def test_unknown_key_is_hard_error(self, tmp_path):
        path = tmp_path / "fit.cfg"
        path.write_text("mystery_knob = 3\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match="mystery_knob"):
            load_config(path)

    def test_bad_value_names_line(self, tmp_path):
        path = tmp_path / "fit.cfg"
        path.write_text("\nconfidence = high\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match=":2"):
            load_config(path)

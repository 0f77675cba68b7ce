import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from geomfit.bundle import Bundle, project_pinhole
from geomfit.synth import PlanePatch, SceneSpec


def fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic quasi-uniform unit vectors (golden-spiral sphere)."""
    k = np.arange(n, dtype=float) + 0.5
    z = 1.0 - 2.0 * k / n
    radius = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    theta = golden * k
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])


def two_plane_spec(seed: int, leak: float = 0.3, noise: float = 0.01,
                   outliers: float = 0.1, points_per_plane: int = 150) -> SceneSpec:
    """A floor patch plus a wall patch sharing an edge region."""
    return SceneSpec(
        patches=(
            PlanePatch((0.0, 0.0, 1.0), 0.0, (0.0, 0.0, 0.0), 1.0),
            PlanePatch((1.0, 0.0, 0.0), -0.6, (0.6, 0.0, 0.5), 1.0),
        ),
        points_per_plane=points_per_plane,
        outlier_fraction=outliers,
        noise_sigma=noise,
        leak_fraction=leak,
        unlabeled_fraction=0.0,
        seed=seed,
    )


def make_test_bundle(seed: int = 21, n_cams: int = 4, n_per_plane: int = 60,
                     pixel_noise: float = 0.5):
    """Ground-truth bundle: two planes, points on them, 4 cameras, noisy
    observations.  Returns (ground_truth_bundle, rng_after_build)."""
    rng = np.random.default_rng(seed)
    planes = np.array([[0.0, 0.0, 1.0, -2.0], [1.0, 0.0, 0.0, -1.0]])
    pts_a = np.column_stack([
        rng.uniform(-1, 1, n_per_plane), rng.uniform(-1, 1, n_per_plane),
        np.full(n_per_plane, 2.0),
    ])
    pts_b = np.column_stack([
        np.full(n_per_plane, 1.0), rng.uniform(-1, 1, n_per_plane),
        rng.uniform(1.0, 3.0, n_per_plane),
    ])
    points = np.vstack([pts_a, pts_b])
    n_points = 2 * n_per_plane
    assoc_point = np.arange(n_points)
    assoc_plane = np.array([0] * n_per_plane + [1] * n_per_plane)
    intrinsics = np.array([500.0, 500.0, 320.0, 240.0])
    rotations, translations = [], []
    for i in range(n_cams):
        rotations.append(Rotation.from_rotvec(rng.normal(0, 0.05, 3)).as_matrix())
        translations.append(np.array([0.2 * i - 0.3, 0.05 * i, 0.0]) + rng.normal(0, 0.02, 3))
    obs_cam, obs_point, obs_uv = [], [], []
    for c in range(n_cams):
        for j in range(n_points):
            uv = project_pinhole(rotations[c], translations[c], points[j], intrinsics)
            obs_cam.append(c)
            obs_point.append(j)
            obs_uv.append(uv + rng.normal(0, pixel_noise, 2))
    bundle = Bundle(
        rotations=np.array(rotations), translations=np.array(translations),
        intrinsics=intrinsics, points=points, planes=planes,
        obs_cam=obs_cam, obs_point=obs_point, obs_uv=obs_uv,
        assoc_point=assoc_point, assoc_plane=assoc_plane,
    )
    return bundle, rng


def perturb_bundle(bundle: Bundle, rng: np.random.Generator,
                   rot_deg: float = 1.0, trans_frac: float = 0.01,
                   point_sigma: float = 0.01) -> Bundle:
    """Perturb all non-gauge cameras and the points."""
    out = bundle.copy()
    for c in range(1, len(out.rotations)):
        axis = rng.normal(0, 1, 3)
        axis /= np.linalg.norm(axis)
        out.rotations[c] = Rotation.from_rotvec(np.deg2rad(rot_deg) * axis).as_matrix() @ out.rotations[c]
        out.translations[c] = out.translations[c] * (1.0 + trans_frac)
    out.points = out.points + rng.normal(0, point_sigma, out.points.shape)
    return out


@pytest.fixture(scope="session")
def warm_mincut():
    """Compile the max-flow kernel once so timed tests measure solves only."""
    import numpy as np
    from geomfit.mincut import ProblemGraph, min_cut
    pg = ProblemGraph([0.2, 0.8], [0.8, 0.2], np.array([[0, 1]]), [0.1])
    min_cut(pg)
    return True

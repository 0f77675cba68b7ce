"""Model estimation for the two geometric families.

Homographies: symmetric transfer error and the normalized direct linear
transform, both minimal (4 correspondences) and algebraic least squares.
Planes: point-plane distance, 3-point minimal fit, and total least squares.
Minimal fits return None on degenerate samples so samplers can retry;
least-squares fits raise DegenerateFitError so callers keep the previous
model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Correspondence, Homography, MapPoint, Plane, as_ref_cur, as_xyz
from .neighbors import GridIndex

MIN_SAMPLE_HOMOGRAPHY = 4
MIN_SAMPLE_PLANE = 3


class DegenerateFitError(ValueError):
    """Least-squares input was rank deficient; keep the previous model."""


@dataclass(frozen=True)
class MinimalSample:
    point_ids: tuple

    def __post_init__(self):
        ids = tuple(int(i) for i in self.point_ids)
        if len(set(ids)) != len(ids):
            raise ValueError(f"sample ids must be distinct, got {ids}")
        object.__setattr__(self, "point_ids", ids)

    def __len__(self) -> int:
        return len(self.point_ids)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def _project_points(matrix: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Apply a homography to (n, 2) points; rows mapping near the plane at
    infinity come back as +inf coordinates instead of raising."""
    ones = np.ones((xy.shape[0], 1))
    h = np.hstack([xy, ones]) @ matrix.T
    w = h[:, 2]
    out = np.full((xy.shape[0], 2), np.inf)
    ok = np.abs(w) >= 1e-12
    out[ok] = h[ok, :2] / w[ok, None]
    return out


def ste_residuals(h: Homography, ref_xy: np.ndarray, cur_xy: np.ndarray) -> np.ndarray:
    """Symmetric transfer error in px for each correspondence (inf when a
    point maps to the plane at infinity)."""
    forward = _project_points(h.matrix, ref_xy)
    backward = _project_points(np.linalg.inv(h.matrix), cur_xy)
    with np.errstate(invalid="ignore"):
        err2 = np.sum((forward - cur_xy) ** 2, axis=1) + np.sum((backward - ref_xy) ** 2, axis=1)
    err2 = np.where(np.isnan(err2), np.inf, err2)
    return np.sqrt(err2)


def ste(h: Homography, c: Correspondence) -> float:
    """Symmetric transfer error of one correspondence, in px."""
    return float(ste_residuals(h, c.ref_point[None, :], c.cur_point[None, :])[0])


def plane_distances(normal, offset: float, xyz: np.ndarray) -> np.ndarray:
    """|n.v + d| / ||n|| for (n, 3) points; tolerates an un-normalized n."""
    normal = np.asarray(normal, dtype=float).reshape(3)
    norm = np.linalg.norm(normal)
    if not norm > 0.0:
        raise ValueError("plane normal must be nonzero")
    return np.abs(xyz @ normal + float(offset)) / norm


def point_plane_distance(plane: Plane, v: MapPoint) -> float:
    """Distance from one map point to a plane, in map units."""
    return float(plane_distances(plane.normal, plane.offset, np.asarray(v.position)[None, :])[0])


def model_residuals(model, points) -> np.ndarray:
    """Per-point distances to a model of either family."""
    if isinstance(model, Plane):
        return plane_distances(model.normal, model.offset, as_xyz(points))
    if isinstance(model, Homography):
        ref, cur = as_ref_cur(points)
        return ste_residuals(model, ref, cur)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def minimal_sample_size(model_or_family) -> int:
    family = model_or_family
    if isinstance(model_or_family, Plane):
        family = "plane"
    elif isinstance(model_or_family, Homography):
        family = "homography"
    if family == "plane":
        return MIN_SAMPLE_PLANE
    if family == "homography":
        return MIN_SAMPLE_HOMOGRAPHY
    raise ValueError(f"unknown model family {model_or_family!r}")


def model_residual(model, points, inlier_threshold: float) -> float:
    """Mean distance of the model's inliers (distance < threshold).

    Returns +inf when fewer inliers than the minimal sample size support
    the model, which forces rejection of under-supported models.
    """
    distances = model_residuals(model, points)
    inliers = distances < inlier_threshold
    if int(np.count_nonzero(inliers)) < minimal_sample_size(model):
        return float("inf")
    return float(np.mean(distances[inliers]))


# ---------------------------------------------------------------------------
# Homography estimation (normalized DLT)
# ---------------------------------------------------------------------------

def _similarity_normalize(xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate the centroid to the origin and scale the mean distance to
    sqrt(2); returns the transformed points and the 3x3 transform."""
    centroid = xy.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(xy - centroid, axis=1))
    scale = np.sqrt(2.0) / mean_dist if mean_dist > 1e-15 else 1.0
    transform = np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    return (xy - centroid) * scale, transform


def _any_three_collinear(xy: np.ndarray, tol: float = 1e-9) -> bool:
    n = xy.shape[0]
    for a in range(n):
        for b in range(a + 1, n):
            for c in range(b + 1, n):
                ab = xy[b] - xy[a]
                ac = xy[c] - xy[a]
                area = 0.5 * abs(ab[0] * ac[1] - ab[1] * ac[0])
                if area < tol:
                    return True
    return False


def _dlt_system(ref: np.ndarray, cur: np.ndarray) -> np.ndarray:
    n = ref.shape[0]
    x, y = ref[:, 0], ref[:, 1]
    u, v = cur[:, 0], cur[:, 1]
    zeros = np.zeros(n)
    ones = np.ones(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.column_stack([x, y, ones, zeros, zeros, zeros, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zeros, zeros, zeros, x, y, ones, -v * x, -v * y, -v])
    return a


def _solve_ndlt(ref: np.ndarray, cur: np.ndarray):
    ref_n, t_ref = _similarity_normalize(ref)
    cur_n, t_cur = _similarity_normalize(cur)
    a = _dlt_system(ref_n, cur_n)
    _, singular, vt = np.linalg.svd(a)
    # A second near-zero singular value means the solution is not unique.
    if ref.shape[0] > 4 and singular[0] > 0 and singular[7] / singular[0] < 1e-12:
        return None
    h_norm = vt[-1].reshape(3, 3)
    matrix = np.linalg.inv(t_cur) @ h_norm @ t_ref
    try:
        return Homography(matrix)
    except ValueError:
        return None


def fit_homography_minimal(sample) -> Homography | None:
    """Normalized DLT from exactly 4 correspondences; None when any three
    reference or current points are collinear."""
    ref, cur = as_ref_cur(sample)
    if ref.shape[0] != 4:
        raise ValueError(f"minimal homography sample must have 4 correspondences, got {ref.shape[0]}")
    ref_n, _ = _similarity_normalize(ref)
    cur_n, _ = _similarity_normalize(cur)
    if _any_three_collinear(ref_n) or _any_three_collinear(cur_n):
        return None
    return _solve_ndlt(ref, cur)


def fit_homography_lsq(inliers) -> Homography:
    """Algebraic least-squares NDLT over all inlier correspondences."""
    ref, cur = as_ref_cur(inliers)
    if ref.shape[0] < 4:
        raise DegenerateFitError(f"need at least 4 correspondences, got {ref.shape[0]}")
    if ref.shape[0] == 4:
        model = fit_homography_minimal((ref, cur))
    else:
        model = _solve_ndlt(ref, cur)
    if model is None:
        raise DegenerateFitError("degenerate correspondence set")
    return model


# ---------------------------------------------------------------------------
# Plane estimation
# ---------------------------------------------------------------------------

def fit_plane_minimal(sample) -> Plane | None:
    """Exact plane through 3 points; None when they are collinear."""
    xyz = as_xyz(sample)
    if xyz.shape[0] != 3:
        raise ValueError(f"minimal plane sample must have 3 points, got {xyz.shape[0]}")
    e1 = xyz[1] - xyz[0]
    e2 = xyz[2] - xyz[0]
    normal = np.cross(e1, e2)
    scale = np.linalg.norm(e1) * np.linalg.norm(e2)
    if np.linalg.norm(normal) < 1e-12 * max(scale, 1e-300):
        return None
    normal = normal / np.linalg.norm(normal)
    return Plane(normal, -float(normal @ xyz[0])).canonicalized()


def fit_plane_lsq(inliers) -> Plane:
    """Total least squares: the centered covariance's smallest singular
    direction is the normal."""
    xyz = as_xyz(inliers)
    if xyz.shape[0] < 3:
        raise DegenerateFitError(f"need at least 3 points, got {xyz.shape[0]}")
    centroid = xyz.mean(axis=0)
    _, singular, vt = np.linalg.svd(xyz - centroid, full_matrices=False)
    if singular[1] < 1e-12 * max(singular[0], 1e-300):
        raise DegenerateFitError("points are collinear")
    normal = vt[-1]
    return Plane(normal, -float(normal @ centroid)).canonicalized()


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def sample_uniform(pool_size: int, m: int, rng: np.random.Generator) -> MinimalSample:
    """Uniform minimal sample: every m-subset of the pool is reachable."""
    if pool_size < m:
        raise ValueError(f"pool of {pool_size} cannot supply a sample of {m}")
    ids = rng.choice(pool_size, size=m, replace=False)
    return MinimalSample(tuple(int(i) for i in ids))


def sample_localized(ref_xy: np.ndarray, grid: GridIndex, m: int, rng: np.random.Generator) -> MinimalSample:
    """Spatially local minimal sample: the first point is uniform, the rest
    are drawn from progressively widening cell neighborhoods around it."""
    ref_xy = np.asarray(ref_xy, dtype=float).reshape(-1, 2)
    n = ref_xy.shape[0]
    if n < m:
        raise ValueError(f"pool of {n} cannot supply a sample of {m}")
    cells = grid.cell_of(ref_xy)
    first = int(rng.integers(n))
    home = cells[first]
    chebyshev = np.max(np.abs(cells - home), axis=1)
    chebyshev[first] = np.iinfo(np.int64).max  # never re-pick the anchor
    for ring in range(grid.cells_per_axis):
        candidates = np.flatnonzero(chebyshev <= ring)
        if candidates.size >= m - 1:
            rest = rng.choice(candidates, size=m - 1, replace=False)
            return MinimalSample((first, *[int(i) for i in rest]))
    rest = rng.choice(np.flatnonzero(np.arange(n) != first), size=m - 1, replace=False)
    return MinimalSample((first, *[int(i) for i in rest]))

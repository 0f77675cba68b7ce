"""Domain types, fitting configuration, and adaptive threshold scaling.

Value objects here are immutable (frozen dataclasses) so they can be shared
freely between threads and hashed into result records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace, fields
from typing import Optional, Sequence, Union

import numpy as np

UNLABELED = -1


class DataFormatError(ValueError):
    """Malformed external data (config/scene/bundle files); carries context."""


class UsageError(ValueError):
    """Caller asked for something the tool does not support (CLI exit 1)."""


def _as_finite_vec(value, size: int, name: str) -> np.ndarray:
    vec = np.asarray(value, dtype=float).reshape(-1)
    if vec.shape != (size,):
        raise ValueError(f"{name} must have {size} components, got shape {np.shape(value)}")
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{name} must be finite, got {vec}")
    return vec


@dataclass(frozen=True)
class Correspondence:
    """A matched 2-D feature pair between a reference and a current frame."""

    ref_point: np.ndarray   # (2,) px in the reference frame
    cur_point: np.ndarray   # (2,) px in the current frame
    prior_label: Optional[int] = None
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ref_point", _as_finite_vec(self.ref_point, 2, "ref_point"))
        object.__setattr__(self, "cur_point", _as_finite_vec(self.cur_point, 2, "cur_point"))
        if self.prior_label is not None and self.prior_label < 0:
            raise ValueError(f"prior_label must be non-negative, got {self.prior_label}")


@dataclass(frozen=True)
class MapPoint:
    """A 3-D landmark position with an optional instance label."""

    position: np.ndarray    # (3,) map units
    prior_label: Optional[int] = None
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", _as_finite_vec(self.position, 3, "position"))
        if self.prior_label is not None and self.prior_label < 0:
            raise ValueError(f"prior_label must be non-negative, got {self.prior_label}")


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective transform, normalized on construction.

    The stored matrix has bottom-right entry 1 when that entry is nonzero,
    otherwise unit Frobenius norm.  Construction rejects singular matrices.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError(f"homography matrix must be finite 3x3, got shape {m.shape}")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        else:
            norm = np.linalg.norm(m)
            if norm == 0.0:
                raise ValueError("homography matrix is zero")
            m = m / norm
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography matrix is singular after normalization")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class Plane:
    """An infinite plane n.v + d = 0 with unit normal n.

    The (normal, offset) pair is rescaled jointly on construction, which
    preserves the plane and all point distances.  Sign is preserved; use
    :meth:`canonicalized` for the d >= 0 convention.
    """

    normal: np.ndarray  # (3,) unit
    offset: float       # map units

    def __post_init__(self):
        n = _as_finite_vec(self.normal, 3, "plane normal")
        norm = float(np.linalg.norm(n))
        if norm < 1e-12:
            raise ValueError("plane normal must be nonzero")
        n = n / norm
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def canonicalized(self) -> "Plane":
        """Return the sign-canonical representative: d >= 0, and for d == 0
        the first nonzero normal component positive."""
        n, d = self.normal, self.offset
        if d < 0.0:
            return Plane(-n, -d)
        if d == 0.0:
            for comp in n:
                if comp != 0.0:
                    if comp < 0.0:
                        return Plane(-n, -d)
                    break
        return self


@dataclass(frozen=True)
class SphericalPlane:
    """Minimal 3-parameter plane form: normal azimuth/elevation plus offset."""

    azimuth: float    # rad, (-pi, pi]
    elevation: float  # rad, [-pi/2, pi/2]
    offset: float     # map units

    def __post_init__(self):
        if not (-math.pi - 1e-12 <= self.azimuth <= math.pi + 1e-12):
            raise ValueError(f"azimuth out of range: {self.azimuth}")
        if not (-math.pi / 2 - 1e-9 <= self.elevation <= math.pi / 2 + 1e-9):
            raise ValueError(f"elevation out of range: {self.elevation}")


def plane_to_spherical(plane: Plane) -> SphericalPlane:
    """Convert (n, d) to (azimuth, elevation, d); requires a unit normal."""
    nx, ny, nz = plane.normal
    if abs(nz) > 1.0 + 1e-9:
        raise ValueError(f"normal z-component {nz} outside [-1, 1]")
    nz = min(1.0, max(-1.0, float(nz)))
    return SphericalPlane(
        azimuth=math.atan2(ny, nx),  # atan2(0, 0) == 0 covers the pole case
        elevation=math.asin(nz),
        offset=plane.offset,
    )


def spherical_to_plane(sph: SphericalPlane) -> Plane:
    """Inverse of :func:`plane_to_spherical`; preserves normal orientation."""
    cos_el = math.cos(sph.elevation)
    normal = np.array([
        cos_el * math.cos(sph.azimuth),
        cos_el * math.sin(sph.azimuth),
        math.sin(sph.elevation),
    ])
    return Plane(normal, sph.offset)


@dataclass(frozen=True)
class Labeling:
    """Per-point inlier/outlier assignment for one model proposal."""

    assignment: np.ndarray  # (n,) bool, True = inlier
    model_id: int = 0

    def __post_init__(self):
        arr = np.asarray(self.assignment, dtype=bool)
        arr.setflags(write=False)
        object.__setattr__(self, "assignment", arr)

    @property
    def inlier_count(self) -> int:
        return int(np.count_nonzero(self.assignment))


@dataclass(frozen=True)
class SegmentationPrior:
    """Per-point instance ids from an external segmenter; -1 means unlabeled.

    Instance ids must be exactly 0..K-1 where K is the instance count.
    """

    labels: np.ndarray  # (n,) int, -1 for unlabeled

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        labels.setflags(write=False)
        distinct = np.unique(labels[labels != UNLABELED])
        if distinct.size and (distinct[0] < 0 or not np.array_equal(distinct, np.arange(distinct.size))):
            raise ValueError(f"instance ids must be exactly 0..K-1, got {distinct.tolist()}")
        object.__setattr__(self, "labels", labels)

    @property
    def instance_count(self) -> int:
        mask = self.labels != UNLABELED
        return int(self.labels[mask].max()) + 1 if mask.any() else 0

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class FitConfig:
    """Fitting parameters; defaults are the published working values.

    Thresholds are stated for a scale-1 map; use the scaling helpers to
    transfer them to the current map scale.
    """

    spatial_weight_homography: float = 0.975   # coherence weight, homography labeling
    spatial_weight_plane: float = 0.6          # coherence weight, plane labeling
    ste_threshold: float = 2.0                 # px, symmetric transfer error inlier gate
    ste_residual: float = 1.0                  # px, accept gate on mean inlier STE
    confidence: float = 0.99                   # inner-loop success probability
    grid_cells_per_axis: int = 8
    max_outer_iterations: int = 50
    distance_threshold: float = 0.02           # map units, point-plane inlier gate
    plane_residual_threshold: float = 0.01     # map units, accept gate on mean inlier distance
    normal_parallel_threshold: float = 0.8     # |cos| above which normals count as parallel
    offset_merge_threshold: float = 0.2        # map units, 10x distance_threshold
    neighbor_radius: float = 0.04              # map units, 2x distance_threshold
    min_plane_support: int = 20                # below this a plane is "weak"
    pairwise_weight: float = 1.0               # per-edge discontinuity penalty
    enable_local_opt: bool = True
    literal_offset_merge_test: bool = False    # use the scalar-sign offset test in merges

    def __post_init__(self):
        for name in ("spatial_weight_homography", "spatial_weight_plane"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")
        for name in ("ste_threshold", "ste_residual", "distance_threshold",
                     "plane_residual_threshold", "normal_parallel_threshold",
                     "offset_merge_threshold", "neighbor_radius", "pairwise_weight"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        for name in ("grid_cells_per_axis", "max_outer_iterations", "min_plane_support"):
            value = getattr(self, name)
            if not (isinstance(value, (int, np.integer)) and value >= 1):
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


def scale_thresholds(cfg: FitConfig, scale: float) -> FitConfig:
    """Multiply the metric thresholds (and their derived values) by `scale`."""
    if not scale > 0.0:
        raise ValueError(f"map scale must be positive, got {scale}")
    return replace(
        cfg,
        distance_threshold=cfg.distance_threshold * scale,
        plane_residual_threshold=cfg.plane_residual_threshold * scale,
        offset_merge_threshold=cfg.offset_merge_threshold * scale,
        neighbor_radius=cfg.neighbor_radius * scale,
    )


def scale_thresholds_mono(cfg: FitConfig, median_depth: float) -> FitConfig:
    """Rescale thresholds for a monocular map normalized to unit median inverse depth."""
    if not median_depth > 0.0:
        raise ValueError(f"median_depth must be positive, got {median_depth}")
    return scale_thresholds(cfg, float(median_depth))


def scale_thresholds_rgbd(cfg: FitConfig, points: Sequence[Union[MapPoint, np.ndarray]]) -> FitConfig:
    """Rescale thresholds by the mean Euclidean norm of the landmark positions."""
    xyz = as_xyz(points)
    if xyz.shape[0] == 0:
        raise ValueError("cannot estimate map scale from an empty point set")
    scale = float(np.mean(np.linalg.norm(xyz, axis=1)))
    if not scale > 0.0:
        raise ValueError("map scale from landmark positions is zero")
    return scale_thresholds(cfg, scale)


_CONFIG_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def load_config(path) -> FitConfig:
    """Read a FitConfig from a flat `key = value` text file.

    Missing keys keep their defaults; unknown keys are a hard error.
    Blank lines and `#` comments are ignored.
    """
    field_types = {f.name: f.type for f in fields(FitConfig)}
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in field_types:
                raise DataFormatError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                overrides[key] = _parse_config_value(field_types[key], value)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    try:
        return FitConfig(**overrides)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def _parse_config_value(type_name: str, value: str):
    if type_name == "bool":
        flag = _CONFIG_BOOL.get(value.lower())
        if flag is None:
            raise ValueError(f"expected a boolean, got {value!r}")
        return flag
    if type_name == "int":
        return int(value)
    return float(value)


def as_xyz(points) -> np.ndarray:
    """Coerce a sequence of MapPoints or an (n, 3) array to a float array."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"expected an (n, 3) array, got shape {arr.shape}")
        return arr
    return np.array([np.asarray(p.position, dtype=float) for p in points], dtype=float).reshape(-1, 3)


def as_ref_cur(correspondences) -> tuple[np.ndarray, np.ndarray]:
    """Coerce correspondences to a pair of (n, 2) arrays (reference, current)."""
    if isinstance(correspondences, tuple) and len(correspondences) == 2:
        ref, cur = (np.asarray(a, dtype=float) for a in correspondences)
    else:
        ref = np.array([c.ref_point for c in correspondences], dtype=float).reshape(-1, 2)
        cur = np.array([c.cur_point for c in correspondences], dtype=float).reshape(-1, 2)
    if ref.shape != cur.shape or ref.ndim != 2 or ref.shape[1] != 2:
        raise ValueError(f"expected matching (n, 2) arrays, got {ref.shape} and {cur.shape}")
    return ref, cur

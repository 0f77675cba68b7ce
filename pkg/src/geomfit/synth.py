"""Synthetic planar scenes with controllable segmentation-mask corruption.

Scenes are square patches of ground-truth planes with isotropic point noise,
uniform box outliers, and a per-point instance mask that can be corrupted in
two ways: boundary points leak into the neighboring instance, and a fraction
of labels is dropped.  The generator keeps a ledger of every corruption it
applies so tests can assert against it, and a fixed seed reproduces the
scene bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import DataFormatError, Plane, SegmentationPrior, UNLABELED


@dataclass(frozen=True)
class PlanePatch:
    """A bounded square patch of an infinite plane."""

    normal: tuple
    offset: float
    center: tuple
    extent: float

    def __post_init__(self):
        plane = self.plane()
        center = np.asarray(self.center, dtype=float)
        if abs(float(plane.normal @ center + plane.offset)) > 1e-6:
            raise ValueError(f"patch center {self.center} does not lie on the plane")
        if not self.extent > 0:
            raise ValueError(f"patch extent must be positive, got {self.extent}")

    def plane(self) -> Plane:
        return Plane(np.asarray(self.normal, dtype=float), float(self.offset))

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic in-plane orthonormal basis."""
        n = self.plane().normal
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(n)))] = 1.0
        u = np.cross(n, axis)
        u = u / np.linalg.norm(u)
        v = np.cross(n, u)
        return u, v


@dataclass(frozen=True)
class SceneSpec:
    patches: tuple
    points_per_plane: int
    outlier_fraction: float = 0.0
    noise_sigma: float = 0.0
    leak_fraction: float = 0.0
    unlabeled_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        if self.points_per_plane > 0 and not self.patches:
            raise ValueError("planar points requested but the spec has no planes")
        for name in ("outlier_fraction", "leak_fraction", "unlabeled_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.noise_sigma < 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.points_per_plane < 0:
            raise ValueError("points_per_plane must be >= 0")


@dataclass(frozen=True)
class SceneTruth:
    """Ground truth plus the generator's corruption ledger."""

    planes: tuple                 # canonical Plane per instance
    membership: np.ndarray        # (n,) true instance id, -1 for outliers
    leaked_ids: np.ndarray        # points whose mask label was leaked
    unlabeled_ids: np.ndarray     # points whose mask label was dropped

    def __post_init__(self):
        for name in ("membership", "leaked_ids", "unlabeled_ids"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def synth_scene(spec: SceneSpec):
    """Generate (points, prior, truth) for a scene specification."""
    rng = np.random.default_rng(spec.seed)
    chunks = []
    membership = []
    for idx, patch in enumerate(spec.patches):
        u, v = patch.basis()
        coeffs = rng.uniform(-patch.extent / 2.0, patch.extent / 2.0, size=(spec.points_per_plane, 2))
        pts = np.asarray(patch.center, dtype=float) + coeffs[:, :1] * u + coeffs[:, 1:] * v
        if spec.noise_sigma > 0.0:
            pts = pts + rng.normal(0.0, spec.noise_sigma, size=pts.shape)
        chunks.append(pts)
        membership.extend([idx] * spec.points_per_plane)
    planar = np.vstack(chunks) if chunks else np.empty((0, 3))
    n_planar = planar.shape[0]

    n_outliers = int(np.floor(spec.outlier_fraction * n_planar))
    if n_outliers > 0:
        lo = planar.min(axis=0)
        hi = planar.max(axis=0)
        span = np.maximum(hi - lo, 1e-6)
        outliers = rng.uniform(lo - 0.25 * span, hi + 0.25 * span, size=(n_outliers, 3))
    else:
        outliers = np.empty((0, 3))

    points = np.vstack([planar, outliers])
    membership = np.array(membership + [UNLABELED] * n_outliers, dtype=np.int64)

    labels = membership.copy()
    leaked: list[int] = []
    planes = [patch.plane().canonicalized() for patch in spec.patches]
    if spec.leak_fraction > 0.0 and len(spec.patches) >= 2:
        # Leak between adjacent instances, both directions, decided on the
        # uncorrupted membership.  The boundary of i toward j is the half of
        # i's points closest to plane j.
        for i in range(len(spec.patches) - 1):
            for src, dst in ((i, i + 1), (i + 1, i)):
                src_ids = np.flatnonzero(membership == src)
                if src_ids.size == 0:
                    continue
                target = planes[dst]
                dist = np.abs(points[src_ids] @ target.normal + target.offset)
                order = src_ids[np.argsort(dist, kind="stable")]
                boundary = order[: int(np.ceil(src_ids.size / 2))]
                n_leak = int(np.floor(spec.leak_fraction * boundary.size))
                if n_leak == 0:
                    continue
                pick = rng.choice(boundary, size=n_leak, replace=False)
                labels[pick] = dst
                leaked.extend(int(p) for p in pick)

    unlabeled: list[int] = []
    if spec.unlabeled_fraction > 0.0 and n_planar > 0:
        n_drop = int(np.floor(spec.unlabeled_fraction * n_planar))
        if n_drop > 0:
            pick = rng.choice(n_planar, size=n_drop, replace=False)
            labels[pick] = UNLABELED
            unlabeled.extend(int(p) for p in pick)

    prior = SegmentationPrior(labels)
    truth = SceneTruth(
        planes=tuple(planes),
        membership=membership,
        leaked_ids=np.array(sorted(set(leaked)), dtype=np.int64),
        unlabeled_ids=np.array(sorted(set(unlabeled)), dtype=np.int64),
    )
    return points, prior, truth


def load_scene_spec(path) -> SceneSpec:
    """Read a SceneSpec from JSON."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        patches = tuple(
            PlanePatch(
                normal=tuple(p["normal"]), offset=float(p["offset"]),
                center=tuple(p["center"]), extent=float(p["extent"]),
            )
            for p in raw["planes"]
        )
        return SceneSpec(
            patches=patches,
            points_per_plane=int(raw["points_per_plane"]),
            outlier_fraction=float(raw.get("outlier_fraction", 0.0)),
            noise_sigma=float(raw.get("noise_sigma", 0.0)),
            leak_fraction=float(raw.get("leak_fraction", 0.0)),
            unlabeled_fraction=float(raw.get("unlabeled_fraction", 0.0)),
            seed=int(raw.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad scene spec: {exc}") from exc


def save_truth(truth: SceneTruth, path) -> None:
    payload = {
        "planes": [
            {"normal": [float(v) for v in p.normal], "offset": float(p.offset)}
            for p in truth.planes
        ],
        "membership": truth.membership.tolist(),
        "leaked_ids": truth.leaked_ids.tolist(),
        "unlabeled_ids": truth.unlabeled_ids.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_truth(path) -> SceneTruth:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        planes = tuple(Plane(np.asarray(p["normal"], dtype=float), float(p["offset"]))
                       for p in raw["planes"])
        return SceneTruth(
            planes=planes,
            membership=np.asarray(raw["membership"], dtype=np.int64),
            leaked_ids=np.asarray(raw.get("leaked_ids", []), dtype=np.int64),
            unlabeled_ids=np.asarray(raw.get("unlabeled_ids", []), dtype=np.int64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad truth file: {exc}") from exc

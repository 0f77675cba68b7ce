"""Plane-map refinement: culling, merging, expansion, and point projection.

Landmarks associate a plane equation with the ids of the map points that
support it.  All mutation here is single-writer; the operations themselves
never touch points that belong to other landmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FitConfig, MapPoint, Plane, as_xyz
from .estimators import DegenerateFitError, fit_plane_lsq, plane_distances

MERGE_ROUNDS = 50
MERGE_SUBSET_FRACTION = 0.6


@dataclass
class PlaneLandmark:
    """A plane in the map together with its supporting point ids."""

    plane: Plane
    point_ids: np.ndarray
    alive: bool = True

    def __post_init__(self):
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64).reshape(-1)

    @property
    def quality(self) -> int:
        return int(self.point_ids.size)


def cull_nonplanar(landmarks, points, distance_threshold: float) -> list[int]:
    """Dissociate points farther than the threshold from their plane.

    Returns the removed point ids (sorted, unique); landmark support counts
    shrink accordingly.
    """
    xyz = as_xyz(points)
    removed: list[int] = []
    for lm in landmarks:
        if not lm.alive or lm.point_ids.size == 0:
            continue
        dist = plane_distances(lm.plane.normal, lm.plane.offset, xyz[lm.point_ids])
        far = dist > distance_threshold
        if np.any(far):
            removed.extend(int(i) for i in lm.point_ids[far])
            lm.point_ids = lm.point_ids[~far]
    return sorted(set(removed))


def should_merge(a: Plane, b: Plane, parallel_threshold: float, offset_threshold: float,
                 literal_offset_test: bool = False) -> bool:
    """True when two planes have nearly parallel normals and nearby offsets.

    The offset test compares canonical offsets with the sign of the normal
    agreement folded in; `literal_offset_test` switches to comparing the bare
    offset signs instead.
    """
    cos_angle = float(a.normal @ b.normal)
    if abs(cos_angle) <= parallel_threshold:
        return False
    if literal_offset_test:
        sign_a = 0.0 if a.offset == 0.0 else a.offset / abs(a.offset)
        sign_b = 0.0 if b.offset == 0.0 else b.offset / abs(b.offset)
        return abs(sign_a - sign_b) < offset_threshold
    sign = 1.0 if cos_angle >= 0.0 else -1.0
    return abs(a.offset - sign * b.offset) < offset_threshold


def merge_planes(a: PlaneLandmark, b: PlaneLandmark, points, cfg: FitConfig,
                 seed: int) -> PlaneLandmark | None:
    """Merge two mergeable landmarks into `a`; `b` is marked dead.

    The combined plane is re-estimated over repeated random 60% subsets of
    the union, keeping the hypothesis with most inliers, then refit by least
    squares on those inliers.  The merge aborts (returns None, both kept)
    when the union is degenerate or the merged residual exceeds the plane
    residual gate.
    """
    if not should_merge(a.plane, b.plane, cfg.normal_parallel_threshold,
                        cfg.offset_merge_threshold, cfg.literal_offset_merge_test):
        raise ValueError("merge_planes requires should_merge to hold")
    xyz = as_xyz(points)
    union = np.unique(np.concatenate([a.point_ids, b.point_ids]))
    rng = np.random.default_rng(seed)

    best_plane = None
    best_support = -1
    best_mean = float("inf")
    subset_size = max(3, int(np.ceil(MERGE_SUBSET_FRACTION * union.size)))
    for _ in range(MERGE_ROUNDS):
        subset = rng.choice(union, size=min(subset_size, union.size), replace=False)
        try:
            candidate = fit_plane_lsq(xyz[np.sort(subset)])
        except DegenerateFitError:
            continue
        dist = plane_distances(candidate.normal, candidate.offset, xyz[union])
        inliers = dist < cfg.distance_threshold
        support = int(np.count_nonzero(inliers))
        mean = float(np.mean(dist[inliers])) if support else float("inf")
        if support > best_support or (support == best_support and mean < best_mean):
            best_plane, best_support, best_mean = candidate, support, mean
    if best_plane is None or best_support < 3:
        return None

    dist = plane_distances(best_plane.normal, best_plane.offset, xyz[union])
    inlier_ids = union[dist < cfg.distance_threshold]
    try:
        merged_plane = fit_plane_lsq(xyz[inlier_ids])
    except DegenerateFitError:
        return None
    final_dist = plane_distances(merged_plane.normal, merged_plane.offset, xyz)
    kept = union[final_dist[union] <= cfg.distance_threshold]
    if kept.size < 3:
        return None
    merged_residual = float(np.mean(final_dist[kept]))
    if merged_residual > cfg.plane_residual_threshold:
        return None

    a.plane = merged_plane
    a.point_ids = kept
    b.alive = False
    b.point_ids = np.empty(0, dtype=np.int64)
    return a


def expand_plane(landmark: PlaneLandmark, points, unassigned_ids, distance_threshold: float) -> int:
    """Claim unassigned points within the threshold of the plane; returns the
    number of newly associated points."""
    if not landmark.alive:
        raise ValueError("cannot expand a dead landmark")
    unassigned_ids = np.asarray(unassigned_ids, dtype=np.int64).reshape(-1)
    if unassigned_ids.size == 0:
        return 0
    xyz = as_xyz(points)
    dist = plane_distances(landmark.plane.normal, landmark.plane.offset, xyz[unassigned_ids])
    claimed = unassigned_ids[dist <= distance_threshold]
    if claimed.size:
        landmark.point_ids = np.unique(np.concatenate([landmark.point_ids, claimed]))
    return int(claimed.size)


def project_onto_plane(plane: Plane, v: MapPoint) -> MapPoint:
    """Move a point along the plane normal onto the plane (signed distance,
    so points on either side travel toward the plane)."""
    position = np.asarray(v.position, dtype=float)
    signed = float(plane.normal @ position + plane.offset) / float(np.linalg.norm(plane.normal))
    return MapPoint(position - signed * plane.normal, prior_label=v.prior_label, id=v.id)


def project_points_onto_plane(plane: Plane, xyz: np.ndarray) -> np.ndarray:
    """Vectorized signed projection of (n, 3) positions onto a plane."""
    xyz = np.asarray(xyz, dtype=float)
    signed = (xyz @ plane.normal + plane.offset) / np.linalg.norm(plane.normal)
    return xyz - signed[:, None] * plane.normal


def merge_sweep(landmarks, points, cfg: FitConfig, seed: int) -> int:
    """Repeatedly merge the first mergeable live pair until stable; returns
    the number of merges performed."""
    rng = np.random.default_rng(seed)
    merges = 0
    changed = True
    while changed:
        changed = False
        live = [lm for lm in landmarks if lm.alive]
        for i in range(len(live)):
            for j in range(i + 1, len(live)):
                a, b = live[i], live[j]
                if not (a.alive and b.alive):
                    continue
                if not should_merge(a.plane, b.plane, cfg.normal_parallel_threshold,
                                    cfg.offset_merge_threshold, cfg.literal_offset_merge_test):
                    continue
                keep, drop = (a, b) if a.quality >= b.quality else (b, a)
                if merge_planes(keep, drop, points, cfg, int(rng.integers(np.iinfo(np.int64).max))) is not None:
                    merges += 1
                    changed = True
        if not changed:
            break
    return merges

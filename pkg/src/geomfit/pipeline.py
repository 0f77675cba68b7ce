"""Plane-fitting pipeline: proposal fitting plus map refinement stages.

Three modes:
  gc            sequential graph-cut RANSAC, then cull / merge / expand
  seq-ransac    the same stages with spatial coherence off and no local
                optimization (plain sequential RANSAC)
  per-mask-lsq  one least-squares plane per mask instance, no robustness
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import FitConfig, SegmentationPrior, as_xyz
from .estimators import DegenerateFitError, fit_plane_lsq
from .evaluate import EvalReport, evaluate_planes
from .planemap import PlaneLandmark, cull_nonplanar, expand_plane, merge_sweep
from .seqfit import STATUS_ACCEPTED, FitResult, fit_sequential, propose_models

MODES = ("gc", "seq-ransac", "per-mask-lsq")


@dataclass
class PipelineResult:
    mode: str
    landmarks: list                 # live PlaneLandmark objects
    fit_results: list               # per-proposal FitResult (empty for per-mask-lsq)
    point_labels: np.ndarray        # per-point landmark slot, -1 unclaimed
    report: Optional[EvalReport]
    timings_ms: Optional[dict]

    @property
    def models(self) -> list:
        return [lm.plane for lm in self.landmarks]


def run_pipeline(points, prior: SegmentationPrior, cfg: FitConfig, mode: str,
                 seed: int = 0, truth=None, collect_timings: bool = False) -> PipelineResult:
    """Fit planes from segmentation-seeded proposals and refine the map.

    With `truth` given, the report carries ground-truth metrics.  Timings are
    collected only on request so default outputs stay reproducible.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    xyz = as_xyz(points)
    if len(prior) != xyz.shape[0]:
        raise ValueError(f"prior covers {len(prior)} points but {xyz.shape[0]} points given")

    timings: dict[str, float] = {}
    clock = time.perf_counter

    if mode == "per-mask-lsq":
        t0 = clock()
        landmarks = []
        fit_results: list[FitResult] = []
        for instance in range(prior.instance_count):
            ids = np.flatnonzero(prior.labels == instance)
            if ids.size < 3:
                continue
            try:
                plane = fit_plane_lsq(xyz[ids])
            except DegenerateFitError:
                continue
            landmarks.append(PlaneLandmark(plane=plane, point_ids=ids))
        timings["fit"] = (clock() - t0) * 1e3
    else:
        fit_cfg = cfg
        if mode == "seq-ransac":
            fit_cfg = replace(cfg, spatial_weight_homography=0.0, spatial_weight_plane=0.0,
                              enable_local_opt=False)
        rng = np.random.default_rng(seed)
        fit_seed = int(rng.integers(np.iinfo(np.int64).max))
        merge_seed = int(rng.integers(np.iinfo(np.int64).max))

        t0 = clock()
        proposals = propose_models(prior, "plane")
        fit_results = fit_sequential(proposals, xyz, fit_cfg, fit_seed)
        timings["fit"] = (clock() - t0) * 1e3

        landmarks = [
            PlaneLandmark(plane=res.model, point_ids=res.inlier_ids)
            for res in fit_results if res.status == STATUS_ACCEPTED
        ]

        t0 = clock()
        cull_nonplanar(landmarks, xyz, fit_cfg.distance_threshold)
        timings["cull"] = (clock() - t0) * 1e3

        t0 = clock()
        merge_sweep(landmarks, xyz, fit_cfg, merge_seed)
        landmarks = [lm for lm in landmarks if lm.alive]
        timings["merge"] = (clock() - t0) * 1e3

        t0 = clock()
        assigned = np.zeros(xyz.shape[0], dtype=bool)
        for lm in landmarks:
            assigned[lm.point_ids] = True
        unassigned = np.flatnonzero(~assigned)
        for lm in landmarks:
            claimed = expand_plane(lm, xyz, unassigned, fit_cfg.distance_threshold)
            if claimed:
                assigned[lm.point_ids] = True
                unassigned = np.flatnonzero(~assigned)
        timings["expand"] = (clock() - t0) * 1e3

    point_labels = np.full(xyz.shape[0], -1, dtype=np.int64)
    for slot, lm in enumerate(landmarks):
        point_labels[lm.point_ids] = slot

    report = None
    if truth is not None:
        report = evaluate_planes(
            [lm.plane for lm in landmarks],
            [lm.point_ids for lm in landmarks],
            truth,
            timings_ms=dict(timings) if collect_timings else None,
        )
    return PipelineResult(
        mode=mode, landmarks=landmarks, fit_results=fit_results,
        point_labels=point_labels, report=report,
        timings_ms=dict(timings) if collect_timings else None,
    )

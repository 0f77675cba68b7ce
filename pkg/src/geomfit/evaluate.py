"""Evaluation of fitted plane sets against ground truth.

Estimates are matched one-to-one to ground-truth planes greedily by smallest
normal angle; unmatched estimates count as false positives.  Inlier
precision/recall compare each model's claimed points with the matched
instance's true members.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .core import Plane, UNLABELED


@dataclass
class ModelEval:
    model_index: int
    truth_index: int            # -1 for an unmatched (false positive) model
    normal_angle_deg: float
    offset_error: float
    precision: float
    recall: float
    support: int


@dataclass
class EvalReport:
    per_model: list
    mean_normal_angle_deg: float    # over matched models; nan when none
    misclassification_rate: float
    n_models: int
    n_truth: int
    n_unmatched_models: int
    n_unmatched_truth: int
    timings_ms: Optional[dict] = None

    def to_dict(self) -> dict:
        payload = asdict(self)
        if payload["timings_ms"] is None:
            del payload["timings_ms"]
        return payload


def normal_angle_deg(a: Plane, b: Plane) -> float:
    """Angle between undirected plane normals, in degrees."""
    cos = abs(float(a.normal @ b.normal))
    return math.degrees(math.acos(min(1.0, cos)))


def match_planes(estimates, truths) -> list[tuple[int, int]]:
    """Greedy one-to-one matching by smallest normal angle."""
    if not estimates or not truths:
        return []
    angles = np.array([[normal_angle_deg(e, t) for t in truths] for e in estimates])
    pairs = []
    free_e = set(range(len(estimates)))
    free_t = set(range(len(truths)))
    while free_e and free_t:
        best = None
        for e in sorted(free_e):
            for t in sorted(free_t):
                if best is None or angles[e, t] < angles[best[0], best[1]]:
                    best = (e, t)
        pairs.append(best)
        free_e.remove(best[0])
        free_t.remove(best[1])
    return pairs


def evaluate_planes(models, claimed_ids, truth, timings_ms=None) -> EvalReport:
    """Score fitted planes and their claimed point sets against the truth.

    `models` are the estimated planes, `claimed_ids[k]` the point ids model k
    claims as inliers, `truth` a SceneTruth.
    """
    truths = list(truth.planes)
    membership = truth.membership
    pairs = match_planes(list(models), truths)
    matched = {e: t for e, t in pairs}

    per_model = []
    predicted = np.full(membership.shape[0], UNLABELED, dtype=np.int64)
    for k, model in enumerate(models):
        ids = np.asarray(claimed_ids[k], dtype=np.int64)
        t = matched.get(k, -1)
        if t >= 0:
            gt_plane = truths[t]
            angle = normal_angle_deg(model, gt_plane)
            sign = 1.0 if float(model.normal @ gt_plane.normal) >= 0 else -1.0
            offset_err = abs(model.offset - sign * gt_plane.offset)
            members = np.flatnonzero(membership == t)
            true_positive = np.intersect1d(ids, members).size
            precision = true_positive / ids.size if ids.size else 0.0
            recall = true_positive / members.size if members.size else 0.0
            predicted[ids] = t
        else:
            angle = float("nan")
            offset_err = float("nan")
            precision = 0.0
            recall = 0.0
        per_model.append(ModelEval(
            model_index=k, truth_index=t, normal_angle_deg=angle,
            offset_error=offset_err, precision=precision, recall=recall,
            support=int(np.asarray(claimed_ids[k]).size),
        ))

    matched_angles = [m.normal_angle_deg for m in per_model if m.truth_index >= 0]
    mean_angle = float(np.mean(matched_angles)) if matched_angles else float("nan")
    misclassification = float(np.mean(predicted != membership)) if membership.size else 0.0
    return EvalReport(
        per_model=per_model,
        mean_normal_angle_deg=mean_angle,
        misclassification_rate=misclassification,
        n_models=len(list(models)),
        n_truth=len(truths),
        n_unmatched_models=len(list(models)) - len(pairs),
        n_unmatched_truth=len(truths) - len(pairs),
        timings_ms=timings_ms,
    )

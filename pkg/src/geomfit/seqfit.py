"""Sequential graph-cut RANSAC driver for both model families.

One proposal per segmentation instance is fitted with a locally optimized
RANSAC: an outer loop of at most `max_outer_iterations` rounds, an inner
hypothesize-and-verify loop with a confidence-based iteration cap, and a
graph-cut local-optimization step that re-labels inliers with spatial
coherence and refits from a random subset of them whenever a new
so-far-the-best model appears.  Proposals are fitted largest first and each
accepted model's inliers are removed from the pools of later proposals.

Model selection inside the inner loop uses the truncated mean residual over
the proposal's points (distances clipped at the inlier gate), which shrinks
as support grows and quality improves.  The reported residual of a finished
model is the mean distance of its inliers, compared against the accept gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import FitConfig, Labeling, SegmentationPrior, as_ref_cur, as_xyz
from .estimators import (
    DegenerateFitError,
    fit_homography_lsq,
    fit_homography_minimal,
    fit_plane_lsq,
    fit_plane_minimal,
    minimal_sample_size,
    model_residuals,
    sample_localized,
    sample_uniform,
)
from .mincut import build_problem_graph, min_cut
from .neighbors import GridIndex, NeighborGraph, grid_graph, radius_graph

NGC_CAP = 10_000
NGC_FLOOR = 50
LO_SUBSET_FACTOR = 7

STATUS_ACCEPTED = "accepted"
STATUS_REJECTED_WEAK = "rejected-weak"
STATUS_REJECTED_RESIDUAL = "rejected-residual"
STATUS_DEGENERATE = "degenerate"


@dataclass(frozen=True)
class ModelProposal:
    """A model hypothesis seeded by one segmentation instance."""

    family: str                 # "homography" | "plane"
    point_ids: np.ndarray       # indices into the full point set
    proposal_id: int

    def __post_init__(self):
        if self.family not in ("homography", "plane"):
            raise ValueError(f"unknown model family {self.family!r}")
        ids = np.asarray(self.point_ids, dtype=np.int64).reshape(-1)
        if np.unique(ids).size != ids.size:
            raise ValueError("proposal point ids must be distinct")
        ids.setflags(write=False)
        object.__setattr__(self, "point_ids", ids)

    @property
    def is_degenerate(self) -> bool:
        return self.point_ids.size < minimal_sample_size(self.family)


@dataclass(eq=False)
class FitResult:
    """Outcome of fitting one proposal."""

    model: Optional[object]            # Plane or Homography
    labeling: Optional[Labeling]       # over `point_ids`, True = inlier
    point_ids: np.ndarray              # the points the labeling refers to
    support: int                       # inlier count of the final model
    residual: float                    # mean inlier distance of the final model
    iterations: int                    # inner-loop iterations consumed
    lo_invocations: int
    status: str
    proposal_id: int
    score_history: tuple = ()          # accepted so-far-best scores, non-increasing
    lo_support_history: tuple = ()     # per LO invocation: accepted supports, strictly increasing

    @property
    def inlier_ids(self) -> np.ndarray:
        if self.labeling is None:
            return np.empty(0, dtype=np.int64)
        return self.point_ids[self.labeling.assignment]


def propose_models(prior: SegmentationPrior, family: str) -> list[ModelProposal]:
    """One proposal per instance id, carrying exactly that instance's points;
    unlabeled points belong to no proposal."""
    proposals = []
    for instance in range(prior.instance_count):
        ids = np.flatnonzero(prior.labels == instance)
        proposals.append(ModelProposal(family=family, point_ids=ids, proposal_id=instance))
    return proposals


# ---------------------------------------------------------------------------
# Family plumbing
# ---------------------------------------------------------------------------

class _FamilyOps:
    """Per-family data access, thresholds, and estimator bindings."""

    def __init__(self, family: str, points, cfg: FitConfig, grid_index: Optional[GridIndex]):
        self.family = family
        self.m = minimal_sample_size(family)
        if family == "plane":
            self.xyz = as_xyz(points)
            self.inlier_threshold = cfg.distance_threshold
            self.accept_threshold = cfg.plane_residual_threshold
            self.spatial_weight = cfg.spatial_weight_plane
            self.grid_index = None
        else:
            self.ref, self.cur = as_ref_cur(points)
            self.inlier_threshold = cfg.ste_threshold
            self.accept_threshold = cfg.ste_residual
            self.spatial_weight = cfg.spatial_weight_homography
            self.grid_index = grid_index

    def take(self, ids: np.ndarray) -> "_FamilyData":
        if self.family == "plane":
            return _FamilyData(self, xyz=self.xyz[ids])
        return _FamilyData(self, ref=self.ref[ids], cur=self.cur[ids])


class _FamilyData:
    """One proposal's slice of the data with vectorized residuals."""

    def __init__(self, ops: _FamilyOps, xyz=None, ref=None, cur=None):
        self.ops = ops
        self.xyz = xyz
        self.ref = ref
        self.cur = cur

    def __len__(self) -> int:
        return len(self.xyz) if self.xyz is not None else len(self.ref)

    def residuals(self, model) -> np.ndarray:
        if self.ops.family == "plane":
            return model_residuals(model, self.xyz)
        return model_residuals(model, (self.ref, self.cur))

    def subset(self, idx: np.ndarray):
        if self.ops.family == "plane":
            return self.xyz[idx]
        return self.ref[idx], self.cur[idx]

    def fit_minimal(self, idx) -> Optional[object]:
        idx = np.asarray(idx, dtype=np.int64)
        if self.ops.family == "plane":
            return fit_plane_minimal(self.xyz[idx])
        return fit_homography_minimal((self.ref[idx], self.cur[idx]))

    def fit_lsq(self, idx: np.ndarray):
        if self.ops.family == "plane":
            return fit_plane_lsq(self.xyz[idx])
        return fit_homography_lsq((self.ref[idx], self.cur[idx]))

    def draw_sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.ops.family == "homography" and self.ops.grid_index is not None:
            sample = sample_localized(self.ref, self.ops.grid_index, self.ops.m, rng)
        else:
            sample = sample_uniform(len(self), self.ops.m, rng)
        return np.asarray(sample.point_ids, dtype=np.int64)


def _ngc_cap(best_support: int, pool_size: int, m: int, confidence: float) -> int:
    """Confidence-based inner iteration cap from the current inlier ratio."""
    if best_support <= 0 or pool_size <= 0:
        return NGC_CAP
    ratio = min(1.0, best_support / pool_size)
    hit = ratio ** m
    if hit >= 1.0:
        return NGC_FLOOR
    denom = math.log1p(-hit)
    if denom == 0.0:
        return NGC_CAP
    needed = math.ceil(math.log1p(-confidence) / denom)
    return int(min(NGC_CAP, max(NGC_FLOOR, needed)))


def _truncated_mean(distances: np.ndarray, threshold: float) -> float:
    return float(np.mean(np.minimum(distances, threshold)))


def _mean_inlier_distance(distances: np.ndarray, threshold: float, m: int) -> float:
    inliers = distances < threshold
    if int(np.count_nonzero(inliers)) < m:
        return float("inf")
    return float(np.mean(distances[inliers]))


def _local_optimize(model, inliers, support, data: _FamilyData, graph: NeighborGraph,
                    rng: np.random.Generator):
    """Alternate graph-cut relabeling with subset refits while support grows.

    Returns the improved (model, inliers, support), the truncated-mean score
    of the final model, and the accepted support sequence.
    """
    ops = data.ops
    threshold = ops.inlier_threshold
    history = [int(support)]
    cur_model, cur_inliers, cur_support = model, inliers, support
    cur_dist = data.residuals(cur_model)
    cur_mean = _mean_inlier_distance(cur_dist, threshold, ops.m)
    changed = True
    while changed:
        changed = False
        problem = build_problem_graph(cur_dist, threshold, graph, ops.spatial_weight)
        cut = min_cut(problem)
        cut_inlier_idx = np.flatnonzero(cut.labels)
        if cut_inlier_idx.size < ops.m:
            break
        subset_size = min(LO_SUBSET_FACTOR * ops.m, cut_inlier_idx.size)
        subset = rng.choice(cut_inlier_idx, size=subset_size, replace=False)
        try:
            candidate = data.fit_lsq(np.sort(subset))
        except DegenerateFitError:
            break
        cand_dist = data.residuals(candidate)
        cand_inliers = cand_dist < threshold
        cand_support = int(np.count_nonzero(cand_inliers))
        cand_mean = _mean_inlier_distance(cand_dist, threshold, ops.m)
        if cand_support > cur_support:
            cur_model, cur_inliers, cur_support = candidate, cand_inliers, cand_support
            cur_dist, cur_mean = cand_dist, cand_mean
            history.append(cand_support)
            changed = True
        elif cand_support == cur_support and cand_mean < cur_mean:
            # Equal support with a tighter fit: keep it, but the loop ends.
            cur_model, cur_inliers = candidate, cand_inliers
            cur_dist, cur_mean = cand_dist, cand_mean
    score = _truncated_mean(cur_dist, threshold)
    return cur_model, cur_inliers, cur_support, score, tuple(history)


def fit_one(proposal: ModelProposal, points, graph: NeighborGraph, cfg: FitConfig,
            seed: int, grid_index: Optional[GridIndex] = None) -> FitResult:
    """Fit one proposal with the locally optimized nested-loop search.

    `graph` must be the neighborhood graph over the proposal's points (local
    0..k-1 indexing).  The same seed reproduces the result bit for bit.
    """
    ops = _FamilyOps(proposal.family, points, cfg, grid_index)
    ids = proposal.point_ids
    if ids.size < ops.m:
        return FitResult(
            model=None, labeling=None, point_ids=ids, support=0, residual=float("inf"),
            iterations=0, lo_invocations=0, status=STATUS_DEGENERATE,
            proposal_id=proposal.proposal_id,
        )
    if graph.n_nodes != ids.size:
        raise ValueError(f"graph covers {graph.n_nodes} nodes but the proposal has {ids.size} points")
    data = ops.take(ids)
    rng = np.random.default_rng(seed)

    best_model = None
    best_inliers = None
    best_support = 0
    score_star = float("inf")
    report_residual = float("inf")
    score_history: list[float] = []
    lo_histories: list[tuple] = []
    iterations = 0
    lo_invocations = 0

    for _ in range(cfg.max_outer_iterations):
        k = 0
        while k < _ngc_cap(best_support, len(data), ops.m, cfg.confidence):
            k += 1
            iterations += 1
            model = data.fit_minimal(data.draw_sample(rng))
            if model is None:
                continue
            dist = data.residuals(model)
            score = _truncated_mean(dist, ops.inlier_threshold)
            if score < score_star:
                score_star = score
                score_history.append(score)
                best_model = model
                best_inliers = dist < ops.inlier_threshold
                best_support = int(np.count_nonzero(best_inliers))
                cap_now = _ngc_cap(best_support, len(data), ops.m, cfg.confidence)
                # Skip local optimization during the burn-in of the inner loop:
                # the very first best model is usually poor.
                if cfg.enable_local_opt and k > max(1, cap_now // 10):
                    lo_invocations += 1
                    best_model, best_inliers, best_support, lo_score, history = _local_optimize(
                        best_model, best_inliers, best_support, data, graph, rng)
                    lo_histories.append(history)
                    score_star = min(score_star, lo_score)
        if best_model is None:
            # A full inner pass at the uninformed cap found nothing; the
            # sampler is memoryless, so further outer rounds cannot help.
            break
        if best_support >= ops.m:
            try:
                refit = data.fit_lsq(np.flatnonzero(best_inliers))
            except DegenerateFitError:
                refit = None
            if refit is not None:
                dist = data.residuals(refit)
                best_model = refit
                best_inliers = dist < ops.inlier_threshold
                best_support = int(np.count_nonzero(best_inliers))
                score_star = min(score_star, _truncated_mean(dist, ops.inlier_threshold))
            report_residual = _mean_inlier_distance(
                data.residuals(best_model), ops.inlier_threshold, ops.m)
            if report_residual < ops.accept_threshold:
                break

    if best_model is None or best_support < ops.m:
        status = STATUS_DEGENERATE
        best_model = None
        labeling = None
        best_support = 0
        report_residual = float("inf")
    elif report_residual <= ops.accept_threshold:
        weak = proposal.family == "plane" and best_support < cfg.min_plane_support
        status = STATUS_REJECTED_WEAK if weak else STATUS_ACCEPTED
        labeling = Labeling(best_inliers, model_id=proposal.proposal_id)
    else:
        status = STATUS_REJECTED_RESIDUAL
        labeling = Labeling(best_inliers, model_id=proposal.proposal_id)

    return FitResult(
        model=best_model, labeling=labeling, point_ids=ids, support=best_support,
        residual=report_residual, iterations=iterations, lo_invocations=lo_invocations,
        status=status, proposal_id=proposal.proposal_id,
        score_history=tuple(score_history), lo_support_history=tuple(lo_histories),
    )


def _proposal_graph(family: str, data_slice, cfg: FitConfig, image_size) -> NeighborGraph:
    if family == "plane":
        return radius_graph(data_slice, cfg.neighbor_radius, cfg.pairwise_weight)
    return grid_graph(data_slice, image_size, cfg.grid_cells_per_axis, cfg.pairwise_weight)


def fit_sequential(proposals: Sequence[ModelProposal], points, cfg: FitConfig, seed: int,
                   image_size=None) -> list[FitResult]:
    """Fit proposals largest-first with sequential inlier removal.

    Each proposal gets a child seed drawn from `seed` in processing order, so
    disjoint proposals behave exactly like independent fit_one calls.
    Results come back in processing order.
    """
    if not proposals:
        return []
    family = proposals[0].family
    if any(p.family != family for p in proposals):
        raise ValueError("all proposals in one batch must share a model family")
    ops = _FamilyOps(family, points, cfg, None)
    grid_index = None
    if family == "homography":
        if image_size is None:
            raise ValueError("homography fitting requires image_size for the sampling grid")
        grid_index = GridIndex(image_size, cfg.grid_cells_per_axis)

    rng = np.random.default_rng(seed)
    order = sorted(proposals, key=lambda p: (-p.point_ids.size, p.proposal_id))
    n_total = len(ops.xyz) if family == "plane" else len(ops.ref)
    claimed = np.zeros(n_total, dtype=bool)
    results = []
    for proposal in order:
        child_seed = int(rng.integers(np.iinfo(np.int64).max))
        ids = proposal.point_ids[~claimed[proposal.point_ids]]
        effective = ModelProposal(family, ids, proposal.proposal_id)
        if effective.is_degenerate:
            results.append(FitResult(
                model=None, labeling=None, point_ids=ids, support=0, residual=float("inf"),
                iterations=0, lo_invocations=0, status=STATUS_DEGENERATE,
                proposal_id=proposal.proposal_id,
            ))
            continue
        if family == "plane":
            graph = _proposal_graph(family, ops.xyz[ids], cfg, image_size)
        else:
            graph = _proposal_graph(family, (ops.ref[ids], ops.cur[ids]), cfg, image_size)
        result = fit_one(effective, points, graph, cfg, child_seed, grid_index)
        if result.status == STATUS_ACCEPTED:
            claimed[result.inlier_ids] = True
        results.append(result)
    return results


def sequential_baseline(proposals: Sequence[ModelProposal], points, cfg: FitConfig, seed: int,
                        image_size=None) -> list[FitResult]:
    """Plain sequential RANSAC: no spatial coherence, no local optimization."""
    from dataclasses import replace
    plain = replace(cfg, spatial_weight_homography=0.0, spatial_weight_plane=0.0,
                    enable_local_opt=False)
    return fit_sequential(proposals, points, plain, seed, image_size=image_size)


def baseline_ransac(points, cfg: FitConfig, seed: int, family: str,
                    image_size=None) -> FitResult:
    """Classic single-model RANSAC with the 0-1 inlier measure.

    Maximizes the inlier count under the family's inlier gate (ties broken
    by lower mean inlier distance), then refits by least squares on the
    winner's inliers.
    """
    grid_index = GridIndex(image_size, cfg.grid_cells_per_axis) \
        if (family == "homography" and image_size is not None) else None
    ops = _FamilyOps(family, points, cfg, grid_index)
    n = len(ops.xyz) if family == "plane" else len(ops.ref)
    if n < ops.m:
        raise ValueError(f"need at least {ops.m} points, got {n}")
    data = ops.take(np.arange(n))
    rng = np.random.default_rng(seed)

    best_model = None
    best_inliers = None
    best_support = 0
    best_mean = float("inf")
    iterations = 0
    k = 0
    while k < _ngc_cap(best_support, n, ops.m, cfg.confidence):
        k += 1
        iterations += 1
        model = data.fit_minimal(data.draw_sample(rng))
        if model is None:
            continue
        dist = data.residuals(model)
        inliers = dist < ops.inlier_threshold
        support = int(np.count_nonzero(inliers))
        mean = _mean_inlier_distance(dist, ops.inlier_threshold, ops.m)
        if support > best_support or (support == best_support and mean < best_mean):
            best_model, best_inliers, best_support, best_mean = model, inliers, support, mean

    if best_model is None or best_support < ops.m:
        return FitResult(
            model=None, labeling=None, point_ids=np.arange(n), support=0,
            residual=float("inf"), iterations=iterations, lo_invocations=0,
            status=STATUS_DEGENERATE, proposal_id=0,
        )
    try:
        refit = data.fit_lsq(np.flatnonzero(best_inliers))
        dist = data.residuals(refit)
        best_model = refit
        best_inliers = dist < ops.inlier_threshold
        best_support = int(np.count_nonzero(best_inliers))
    except DegenerateFitError:
        dist = data.residuals(best_model)
    residual = _mean_inlier_distance(dist, ops.inlier_threshold, ops.m)
    accepted = residual <= ops.accept_threshold
    return FitResult(
        model=best_model, labeling=Labeling(best_inliers, model_id=0),
        point_ids=np.arange(n), support=best_support, residual=residual,
        iterations=iterations, lo_invocations=0,
        status=STATUS_ACCEPTED if accepted else STATUS_REJECTED_RESIDUAL, proposal_id=0,
    )

"""Robust multi-model fitting of homographies and 3-D planes.

Sequential graph-cut RANSAC over segmentation-seeded proposals, plane-map
refinement (cull / merge / expand / project), and joint bundle refinement
of cameras, points, and planes.
"""

from .core import (
    Correspondence,
    DataFormatError,
    FitConfig,
    Homography,
    Labeling,
    MapPoint,
    Plane,
    SegmentationPrior,
    SphericalPlane,
    UNLABELED,
    UsageError,
    load_config,
    plane_to_spherical,
    scale_thresholds_mono,
    scale_thresholds_rgbd,
    spherical_to_plane,
)
from .neighbors import GridIndex, NeighborGraph, grid_graph, radius_graph
from .mincut import CutResult, ProblemGraph, build_problem_graph, energy_of, min_cut
from .estimators import (
    DegenerateFitError,
    MinimalSample,
    fit_homography_lsq,
    fit_homography_minimal,
    fit_plane_lsq,
    fit_plane_minimal,
    model_residual,
    point_plane_distance,
    sample_localized,
    sample_uniform,
    ste,
)
from .seqfit import (
    FitResult,
    ModelProposal,
    baseline_ransac,
    fit_one,
    fit_sequential,
    propose_models,
    sequential_baseline,
)
from .planemap import (
    PlaneLandmark,
    cull_nonplanar,
    expand_plane,
    merge_planes,
    merge_sweep,
    project_onto_plane,
    should_merge,
)
from .bundle import Bundle, RefineResult, joint_refine, load_bundle, save_bundle
from .synth import PlanePatch, SceneSpec, SceneTruth, synth_scene
from .evaluate import EvalReport, evaluate_planes, match_planes
from .pipeline import PipelineResult, run_pipeline

__version__ = "0.1.0"

"""Command-line interface.

Subcommands: synth, fit-planes, fit-homographies, refine-map, eval.
Exit codes: 0 success, 1 usage error, 2 data error.  All randomized
subcommands take --seed and produce byte-identical output when rerun with
identical inputs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import io as gio
from .bundle import joint_refine, load_bundle, save_bundle
from .core import DataFormatError, FitConfig, Plane, UsageError, load_config
from .evaluate import evaluate_planes
from .pipeline import run_pipeline
from .seqfit import fit_sequential, propose_models
from .synth import load_scene_spec, load_truth, save_truth, synth_scene

_MODE_NAMES = {"gc": "gc", "seq": "seq-ransac", "lsq": "per-mask-lsq"}


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _image_size(text: str):
    try:
        w, h = text.lower().split("x")
        return float(w), float(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _finite_or_none(value: float):
    return float(value) if math.isfinite(value) else None


def _write_json(payload, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _load_cfg(path) -> FitConfig:
    return load_config(path) if path else FitConfig()


def _build_parser() -> _Parser:
    parser = _Parser(prog="geomfit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic planar scene")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-planes", help="fit planes from points and a segmentation mask")
    p.add_argument("--points", required=True)
    p.add_argument("--format", default=None, choices=("csv", "ply"), help="points file format")
    p.add_argument("--mask", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--mode", default="gc", choices=tuple(_MODE_NAMES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in the output")
    p.add_argument("--out", required=True, help="result JSON path")

    p = sub.add_parser("fit-homographies", help="fit homographies from matched correspondences")
    p.add_argument("--matches", required=True)
    p.add_argument("--image-size", required=True, type=_image_size, metavar="WxH")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="result JSON path")

    p = sub.add_parser("refine-map", help="jointly refine a bundle of cameras, points, and planes")
    p.add_argument("--bundle", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--out", required=True, help="refined bundle path")
    p.add_argument("--report", default=None, help="optional JSON report path")

    p = sub.add_parser("eval", help="score a fit-planes result against ground truth")
    p.add_argument("--result", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    return parser


def _cmd_synth(args) -> int:
    spec = load_scene_spec(args.spec)
    points, prior, truth = synth_scene(spec)
    os.makedirs(args.out, exist_ok=True)
    ids = np.arange(points.shape[0])
    gio.save_points_csv(os.path.join(args.out, "points.csv"), ids, points)
    gio.save_mask_csv(os.path.join(args.out, "mask.csv"), ids, prior.labels)
    save_truth(truth, os.path.join(args.out, "truth.json"))
    return 0


def _cmd_fit_planes(args) -> int:
    ids, xyz, _ = gio.load_points_any(args.points, args.format)
    mask_ids, mask_labels = gio.load_mask_csv(args.mask)
    prior = gio.prior_for_points(ids, mask_ids, mask_labels)
    cfg = _load_cfg(args.config)
    result = run_pipeline(xyz, prior, cfg, _MODE_NAMES[args.mode], seed=args.seed,
                          collect_timings=args.timings)
    payload = {
        "mode": result.mode,
        "seed": args.seed,
        "models": [
            {
                "normal": [float(v) for v in lm.plane.normal],
                "offset": float(lm.plane.offset),
                "support": lm.quality,
                "point_ids": [int(ids[i]) for i in lm.point_ids],
            }
            for lm in result.landmarks
        ],
        "point_labels": [int(v) for v in result.point_labels],
        "proposals": [
            {
                "proposal_id": res.proposal_id,
                "status": res.status,
                "support": res.support,
                "residual": _finite_or_none(res.residual),
                "iterations": res.iterations,
                "lo_invocations": res.lo_invocations,
            }
            for res in result.fit_results
        ],
    }
    if args.timings:
        payload["timings_ms"] = result.timings_ms
    _write_json(payload, args.out)
    return 0


def _cmd_fit_homographies(args) -> int:
    ids, ref, cur, labels = gio.load_correspondences_csv(args.matches)
    if labels is None:
        labels = np.zeros(ids.size, dtype=np.int64)  # one instance covering all matches
    prior = gio.prior_for_points(ids, ids, labels)
    cfg = _load_cfg(args.config)
    proposals = propose_models(prior, "homography")
    results = fit_sequential(proposals, (ref, cur), cfg, args.seed, image_size=args.image_size)
    payload = {
        "seed": args.seed,
        "models": [
            {
                "proposal_id": res.proposal_id,
                "status": res.status,
                "matrix": [[float(v) for v in row] for row in res.model.matrix] if res.model is not None else None,
                "support": res.support,
                "residual": _finite_or_none(res.residual),
                "inlier_ids": [int(ids[i]) for i in res.inlier_ids],
            }
            for res in results
        ],
    }
    _write_json(payload, args.out)
    return 0


def _cmd_refine_map(args) -> int:
    with open(args.bundle, "r", encoding="utf-8") as fh:
        bundle = load_bundle(fh)
    cfg = _load_cfg(args.config)
    # Structure first with cameras held fixed, then the full joint problem.
    structure = joint_refine(bundle, cfg, max_iters=args.max_iters, fix_cameras=True)
    full = joint_refine(structure.bundle, cfg, max_iters=args.max_iters, fix_cameras=False)
    with open(args.out, "w", encoding="utf-8") as fh:
        save_bundle(full.bundle, fh)
    if args.report:
        payload = {
            "structure_stage": _refine_report(structure),
            "joint_stage": _refine_report(full),
        }
        _write_json(payload, args.report)
    return 0


def _refine_report(result) -> dict:
    return {
        "initial_cost": result.costs[0],
        "final_cost": result.costs[-1],
        "accepted_steps": len(result.costs) - 1,
        "iterations": result.iterations,
        "converged": result.converged,
        "warning": result.warning,
        "rms_reprojection_px": result.rms_reprojection,
        "rms_point_plane": result.rms_point_plane,
    }


def _cmd_eval(args) -> int:
    with open(args.result, "r", encoding="utf-8") as fh:
        try:
            result = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{args.result}: invalid JSON: {exc}") from exc
    truth = load_truth(args.truth)
    try:
        models = [Plane(np.asarray(m["normal"], dtype=float), float(m["offset"]))
                  for m in result["models"]]
        claimed = [np.asarray(m["point_ids"], dtype=np.int64) for m in result["models"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{args.result}: bad result file: {exc}") from exc
    report = evaluate_planes(models, claimed, truth)
    payload = report.to_dict()
    payload["per_model"] = [
        {k: (_finite_or_none(v) if isinstance(v, float) else v) for k, v in m.items()}
        for m in payload["per_model"]
    ]
    payload["mean_normal_angle_deg"] = _finite_or_none(payload["mean_normal_angle_deg"])
    _write_json(payload, args.out)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "fit-planes": _cmd_fit_planes,
    "fit-homographies": _cmd_fit_homographies,
    "refine-map": _cmd_refine_map,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"geomfit: {exc}\n")
        return 1
    except (DataFormatError, OSError) as exc:
        sys.stderr.write(f"geomfit: {exc}\n")
        return 2
    except ValueError as exc:
        sys.stderr.write(f"geomfit: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())

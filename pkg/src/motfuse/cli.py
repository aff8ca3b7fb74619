"""Command-line entry points: synth, segment, eval, validate.

Exit codes: 0 success, 1 data errors (bad paths, malformed bundles,
unclusterable scenes), 2 usage errors. Diagnostics go to stderr; `eval`
prints its metric report as JSON on stdout. Identical invocations
produce byte-identical output artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bundle_io, fusion, metrics, synth
from .affinity import VIEW_FLOW, VIEW_TRAJECTORY
from .core import EngineConfig, validate_bundle
from .epipolar import RansacConfig

MOVING_PATTERN = "moving_%05d.mseg"
RESULT_FILE = "result.json"

_VIEW_NAMES = {"traj": VIEW_TRAJECTORY, "flow": VIEW_FLOW}


class DataError(ValueError):
    """Anything that should exit 1 with a diagnostic."""


def _parse_views(arg: str):
    names = [v.strip() for v in arg.split(",") if v.strip()]
    if not names:
        raise DataError("no views given")
    try:
        views = tuple(_VIEW_NAMES[n] for n in names)
    except KeyError as exc:
        raise DataError(f"unknown view {exc.args[0]!r}; use traj and/or flow") from exc
    if len(set(views)) != len(views):
        raise DataError("duplicate views")
    return views


def _load_scene(path: str):
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"scene directory not found: {root}")
    return bundle_io.read_bundle(root)


def _cmd_synth(args) -> int:
    spec = synth.ScenarioSpec(
        name=args.scenario, seed=args.seed, num_objects=args.objects,
        frame_count=args.frames, noise_sigma=args.noise)
    bundle, groups = synth.generate_scene(spec)
    out = Path(args.out)
    bundle_io.write_bundle(bundle, out)
    bundle_io.write_ground_truth(groups, out)
    print(f"wrote scene to {out}", file=sys.stderr)
    return 0


def _cmd_segment(args) -> int:
    views = _parse_views(args.views)
    bundle = _load_scene(args.scene)
    violations = validate_bundle(bundle)
    if violations:
        for v in violations:
            print(f"invalid bundle: {v.field}: {v.message}"
                  + (f" (frame {v.frame})" if v.frame is not None else ""),
                  file=sys.stderr)
        return 1
    bundle = dataclasses.replace(
        bundle, tracks=bundle_io.sanitize_tracks(bundle.tracks, bundle.label_maps))

    cfg = EngineConfig(
        frame_gap_traj=args.frame_gap,
        ransac=RansacConfig(),
        ork_t=args.ork_t if args.ork_t is not None else "auto",
        coreg_lambda=args.coreg_lambda,
        coreg_iters=args.iters,
        seed=args.seed,
    )
    result = fusion.segment_scene(bundle, cfg, views=views)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m, mp in enumerate(result.moving_maps):
        bundle_io.write_binary(out / (MOVING_PATTERN % m), b"MSEG", mp)
    doc = {
        "width": bundle.width,
        "height": bundle.height,
        "frame_count": bundle.frame_count,
        "num_motions": bundle.num_motions,
        "seed": args.seed,
        "views": sorted(views),
        "labels": {str(o.id): int(result.assignment.labels[i])
                   for i, o in enumerate(bundle.objects)},
        "moving": {str(o.id): bool(result.assignment.moving[i])
                   for i, o in enumerate(bundle.objects)},
        "affinity": {view: mat.a.tolist() for view, mat in result.affinities.items()},
        "config": dataclasses.asdict(cfg),
        "files": {"moving": MOVING_PATTERN},
    }
    (out / RESULT_FILE).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def _load_moving_maps(path: str) -> list[np.ndarray]:
    """Moving-instance maps from a result directory or a synth bundle.

    A directory with ``result.json`` supplies its written maps; a bundle
    directory with ground truth gets maps derived from the label maps
    and the true motion groups (background's group maps to 0).
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"directory not found: {root}")
    result_path = root / RESULT_FILE
    if result_path.is_file():
        doc = json.loads(result_path.read_text())
        pattern = doc["files"]["moving"]
        return [bundle_io.read_binary(root / (pattern % m), b"MSEG")
                for m in range(int(doc["frame_count"]))]
    if (root / bundle_io.GROUND_TRUTH_FILE).is_file():
        bundle = bundle_io.read_bundle(root)
        groups = bundle_io.read_ground_truth(root)
        bg_group = groups[bundle.background().id]
        maps = []
        for lm in bundle.label_maps:
            out = np.zeros_like(lm.labels, dtype=np.uint16)
            for oid, g in groups.items():
                if g != bg_group:
                    out[lm.labels == oid] = g
            maps.append(out)
        return maps
    raise DataError(f"{root}: neither a result directory ({RESULT_FILE}) nor a "
                    f"bundle with {bundle_io.GROUND_TRUTH_FILE}")


def _cmd_eval(args) -> int:
    pred = _load_moving_maps(args.pred)
    gt = _load_moving_maps(args.gt)
    report = metrics.evaluate(pred, gt)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_validate(args) -> int:
    bundle = _load_scene(args.scene)
    violations = validate_bundle(bundle)
    print(json.dumps([dataclasses.asdict(v) for v in violations],
                     indent=2, sort_keys=True))
    return 0 if not violations else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motfuse",
        description="Object-level motion segmentation by geometric model fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p.add_argument("--scenario", required=True, choices=synth.SCENARIOS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", type=int, default=4)
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.0, help="pixel noise sigma")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("segment", help="cluster a scene's objects by motion")
    p.add_argument("--scene", required=True)
    p.add_argument("--views", default="traj,flow",
                   help="comma-separated subset of {traj,flow}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ork-t", type=int, default=None,
                   help="inlier rank cutoff (default: ceil(k/2))")
    p.add_argument("--lambda", dest="coreg_lambda", type=float, default=0.025,
                   help="co-regularization weight")
    p.add_argument("--frame-gap", type=int, default=3,
                   help="frame gap for fundamental-matrix fitting")
    p.add_argument("--iters", type=int, default=10,
                   help="co-regularization iterations")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("eval", help="score predicted moving instances")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("validate", help="check a bundle's invariants")
    p.add_argument("--scene", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.func(args)
    except (DataError, bundle_io.FormatError, bundle_io.ManifestError,
            synth.InvalidSpec, fusion.NotEnoughEvidence, metrics.ShapeMismatch,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

Subcommands: generate (masks + LiDAR -> cuboids), fuse (merge external
detections), eval (score against ground truth), synth (build a synthetic
scene). Exit codes: 0 success, 1 validation failure (bad manifest, bad
config, bad cuboids), 2 I/O or usage failure (missing input file,
unwritable output; argparse also exits 2 on bad flags).
"""
import argparse
import os
import sys
import time

from . import __version__
from .config import (build_eval_config, build_fusion_config,
                     build_pipeline_config, build_synth_config,
                     load_layered_config)
from .fusion import fuse
from .metrics import evaluate, write_report
from .pseudolabel import generate_scene
from .scene_io import BundleError, load_bundle, read_cuboids, write_cuboids
from .synth import generate_bundle


class _MissingInput(Exception):
    """An input named on the command line does not exist (exit 2)."""


def _require_file(path, what):
    if not os.path.exists(path):
        raise _MissingInput(f"{what} {path} does not exist")


def _parse_frames(text, n_frames):
    """Inclusive index range 'A..B', or a single index 'A'."""
    lo, sep, hi = text.partition("..")
    try:
        lo = int(lo)
        hi = int(hi) if sep else lo
    except ValueError:
        raise ValueError(f"--frames {text!r}: expected A..B with integers")
    if not (0 <= lo <= hi < n_frames):
        raise ValueError(f"--frames {text!r}: out of range for "
                         f"{n_frames} frames")
    return range(lo, hi + 1)


def cmd_generate(args):
    _require_file(args.scene, "scene manifest")
    if args.config:
        _require_file(args.config, "config file")
    layers = load_layered_config(args.config, overrides=args.set)
    cfg = build_pipeline_config(layers.get("pipeline"))
    bundle = load_bundle(args.scene)
    indices = (range(len(bundle.frames)) if args.frames is None
               else _parse_frames(args.frames, len(bundle.frames)))
    start = time.perf_counter()
    cuboids = generate_scene(bundle, cfg, jobs=args.jobs,
                             frame_indices=indices)
    elapsed = time.perf_counter() - start
    write_cuboids(cuboids, args.out, config=cfg.as_dict())
    counts = {}
    for c in cuboids:
        counts[c.frame_id] = counts.get(c.frame_id, 0) + 1
    for i in indices:
        fid = bundle.frames[i].frame_id
        print(f"frame {fid}: {counts.get(fid, 0)} cuboids")
    print(f"wrote {len(cuboids)} cuboids to {args.out} "
          f"({elapsed:.2f}s, jobs={args.jobs})")
    return 0


def cmd_fuse(args):
    _require_file(args.cm3d, "cm3d cuboid file")
    _require_file(args.external, "external cuboid file")
    if args.config:
        _require_file(args.config, "config file")
    overrides = list(args.set)
    if args.tau is not None:
        overrides.append(f"fusion.tau={args.tau}")
    layers = load_layered_config(args.config, overrides=overrides)
    cfg = build_fusion_config(layers.get("fusion"))
    cm3d = read_cuboids(args.cm3d)
    external = read_cuboids(args.external)
    fused, report = fuse(cm3d, external, cfg)
    write_cuboids(fused, args.out, config=cfg.as_dict())
    print(f"matched {len(report.pairs)} pairs; "
          f"{len(report.unmatched_cm3d)} cm3d passed through; "
          f"{len(report.unmatched_external)} external dropped")
    print(f"wrote {len(fused)} cuboids to {args.out}")
    return 0


def cmd_eval(args):
    _require_file(args.pred, "prediction file")
    _require_file(args.gt, "ground-truth file")
    if args.config:
        _require_file(args.config, "config file")
    overrides = list(args.set)
    if args.class_agnostic:
        overrides.append("eval.class_agnostic=true")
    layers = load_layered_config(args.config, overrides=overrides)
    cfg = build_eval_config(layers.get("eval"))
    preds = read_cuboids(args.pred)
    gts = read_cuboids(args.gt)
    report = evaluate(preds, gts, cfg)
    write_report(report, args.out)
    print(report.describe())
    print(f"wrote report to {args.out}")
    return 0


def cmd_synth(args):
    if args.config:
        _require_file(args.config, "config file")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"synth.seed={args.seed}")
    layers = load_layered_config(args.config, overrides=overrides)
    cfg = build_synth_config(layers.get("synth"))
    manifest_path, gt_path = generate_bundle(cfg, args.out)
    print(f"wrote scene manifest {manifest_path}")
    print(f"wrote ground truth {gt_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="masklift",
        description="Lift 2D instance masks and LiDAR into 3D cuboid "
                    "pseudo-labels; fuse, synthesize, and evaluate them.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate",
                       help="lift a scene bundle into cuboids")
    p.add_argument("--scene", required=True,
                   help="path to the scene manifest JSON")
    p.add_argument("--out", required=True, help="output cuboid JSON path")
    p.add_argument("--config", help="config file (pipeline section)")
    p.add_argument("--set", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="config override")
    p.add_argument("--frames", help="inclusive frame index range A..B")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes (output is identical for any "
                        "value)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fuse",
                       help="merge external detections into cuboids")
    p.add_argument("--cm3d", required=True, help="pseudo-label cuboid file")
    p.add_argument("--external", required=True,
                   help="external cuboid file (raw logit scores)")
    p.add_argument("--out", required=True, help="output cuboid JSON path")
    p.add_argument("--config", help="config file (fusion section)")
    p.add_argument("--set", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="config override")
    p.add_argument("--tau", type=float,
                   help="calibration temperature (overrides config)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction cuboid file")
    p.add_argument("--gt", required=True, help="ground-truth cuboid file")
    p.add_argument("--out", required=True, help="metrics report JSON path")
    p.add_argument("--config", help="config file (eval section)")
    p.add_argument("--set", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="config override")
    p.add_argument("--class-agnostic", action="store_true",
                   help="pool all classes into one before matching")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="config file (synth section)")
    p.add_argument("--set", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="config override")
    p.add_argument("--seed", type=int, help="seed (overrides config)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BundleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

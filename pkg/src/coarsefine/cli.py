"""Command-line entry point: ``coarsefine register|evaluate|synth|losscheck``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import pipeline
from .descriptors import FeatureFileError, load_features
from .io import PointCloudFormatError, format_pose, read_points, read_pose, write_points, write_pose
from .pipeline import ManifestError, PipelineConfig, StageError

NOISE_FRACTION = 0.25  # default synthetic noise, as a fraction of the fine voxel


class CliError(Exception):
    """Failure with a stage tag, reported as ``stage: message``."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")


def _config(args) -> PipelineConfig:
    overrides = {
        "tau_c": args.tau_c,
        "tau_m": args.tau_m,
        "patch_size": args.patch_size,
        "n_samples": args.samples,
        "seed": args.seed,
    }
    try:
        if args.config:
            return PipelineConfig.from_file(args.config, **overrides)
        return PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
    except OSError as exc:
        raise CliError("config", str(exc)) from None
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        raise CliError("config", msg.removeprefix("config: ")) from None


def _parse_features(value: str):
    if value == "builtin":
        return None
    if value.startswith("file:"):
        parts = value[len("file:"):].split(",")
        if len(parts) == 2 and all(parts):
            return tuple(parts)
    raise CliError("features", f"expected 'builtin' or 'file:<src>,<tgt>', got {value!r}")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value file; flags below override it")
    p.add_argument("--tau-c", type=float, help="coarse confidence threshold")
    p.add_argument("--tau-m", type=int, help="minimum number of coarse correspondences")
    p.add_argument("--patch-size", type=int, help="points per patch (k)")
    p.add_argument("--samples", type=int, help="correspondences sampled for RANSAC")
    p.add_argument("--seed", type=int, help="pipeline seed")


def cmd_register(args) -> int:
    cfg = _config(args)
    feature_paths = _parse_features(args.features)
    try:
        x, y = read_points(args.src), read_points(args.tgt)
    except (OSError, PointCloudFormatError) as exc:
        raise CliError("load", str(exc)) from None
    features = None
    if feature_paths is not None:
        try:
            features = (load_features(feature_paths[0], len(x)),
                        load_features(feature_paths[1], len(y)))
        except (OSError, FeatureFileError) as exc:
            raise CliError("features", str(exc)) from None
    gt = None
    if args.gt:
        try:
            gt = read_pose(args.gt)
        except (OSError, ValueError) as exc:
            raise CliError("load", str(exc)) from None

    if gt is not None:
        ev, res = pipeline.evaluate_pair(cfg, x, y, gt, features)
    else:
        ev, res = None, pipeline.register_pair(cfg, x, y, features)
    pose = res.registration.transform

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_pose(out / "pose.txt", pose)
        (out / "correspondences.jsonl").write_text(res.correspondences.to_jsonl())
        if ev is not None:
            (out / "evaluation.json").write_text(ev.to_json() + "\n")
    sys.stdout.write(format_pose(pose))
    if ev is not None:
        sys.stdout.write(ev.to_json() + "\n")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    records, _, summary, entries = pipeline.evaluate(cfg, args.manifest, args.jobs,
                                                     coarse_only=args.coarse_only)
    report = pipeline.report_lines(records, entries)
    summary_text = pipeline.summary_json(summary)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = "coarse_" if args.coarse_only else ""
        (out / f"{stem}report.jsonl").write_text(report)
        (out / f"{stem}summary.json").write_text(summary_text)
    else:
        sys.stdout.write(report)
    sys.stdout.write(summary_text)
    return 0


def cmd_synth(args) -> int:
    from .synth import generate_scene

    if args.count < 1:
        raise CliError("synth", "--count must be >= 1")
    noise = NOISE_FRACTION * args.voxel if args.noise is None else args.noise
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for seed in range(args.seed, args.seed + args.count):
        try:
            scene = generate_scene(seed, args.n, args.overlap, noise, args.magnitude)
        except ValueError as exc:
            raise CliError("synth", str(exc)) from None
        stem = f"scene_{seed:04d}"
        write_points(out / f"{stem}_src.ply", scene.source)
        write_points(out / f"{stem}_tgt.ply", scene.target)
        write_pose(out / f"{stem}_gt.txt", scene.gt)
        manifest.append(f"{stem}_src.ply {stem}_tgt.ply {stem}_gt.txt\n")
        print(json.dumps({"scene": stem, "overlap": scene.overlap,
                          "measured_overlap": scene.measured_overlap}))
    (out / "manifest.txt").write_text("".join(manifest))
    return 0


def cmd_losscheck(args) -> int:
    res = pipeline.loss_check(args.seed, iters=args.iters)
    print(f"Lc = {res['lc']:.12g}")
    print(f"Lf = {res['lf']:.12g}")
    print(f"L = {res['l']:.12g}")
    print(f"grad_check_max_abs_err = {res['grad_err']:.3e}")
    if not res["grad_err"] < args.tol:
        raise CliError("losscheck", f"gradient check error {res['grad_err']:.3e} >= {args.tol:g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coarsefine", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register one source/target pair")
    p.add_argument("src")
    p.add_argument("tgt")
    p.add_argument("--gt", help="ground-truth 4x4 pose file; adds an evaluation line")
    p.add_argument("--features", default="builtin", help="builtin | file:<src.csv>,<tgt.csv>")
    p.add_argument("--out", help="directory for pose.txt, correspondences.jsonl, evaluation.json")
    _common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("evaluate", help="evaluate every pair listed in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="directory for report.jsonl and summary.json")
    p.add_argument("--jobs", type=int, default=1, help="pairs evaluated in parallel")
    p.add_argument("--coarse-only", action="store_true",
                   help="ablation: RANSAC on node correspondences, no refinement")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write synthetic scene pairs and a manifest")
    p.add_argument("--n", type=int, default=5000, help="points per view")
    p.add_argument("--overlap", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0, help="seed of the first scene")
    p.add_argument("--count", type=int, default=1, help="number of scenes (consecutive seeds)")
    p.add_argument("--noise", type=float, help="noise sigma in m (default: voxel / 4)")
    p.add_argument("--voxel", type=float, default=0.025, help="fine voxel the noise refers to")
    p.add_argument("--magnitude", type=float, default=0.5, help="transform magnitude")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("losscheck", help="print losses and a gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_losscheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except CliError as exc:
        msg = str(exc)
    except StageError as exc:
        msg = str(exc)
    except ManifestError as exc:
        msg = f"manifest: {exc}"
    except (PointCloudFormatError, FeatureFileError, OSError) as exc:
        msg = f"load: {exc}"
    print(f"error: {msg}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
degeneracy error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from splatprep import __version__
from splatprep.config import PipelineConfig, override, validate_config
from splatprep.errors import ConfigError, SplatPrepError
from splatprep.metrics import LossWeights, MetricReport
from splatprep.pipeline import StageError, evaluate_pairs, run_pipeline
from splatprep.synth import LAYOUTS, RIGS, SynthConfig, make_scene, write_dataset

logger = logging.getLogger("splatprep")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--config", type=Path, help="YAML config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="cap on worker threads")
    g.add_argument("--output", type=Path, help="output directory")
    g.add_argument("-v", "--verbose", action="count", default=0)
    g.add_argument("-q", "--quiet", action="store_true")
    return p


def _input_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("inputs")
    for name in ("model-dir", "mask-dir", "embedding-dir", "image-dir", "reference-ply"):
        g.add_argument(f"--{name}", type=Path)
    return p


def _bool_flag(group, name: str, help: str) -> None:
    group.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=None, help=help)


def _filter_flags(p) -> None:
    g = p.add_argument_group("filter")
    g.add_argument("--hull-threshold", type=float, help="fraction of hull diagonal (default 0.05)")
    g.add_argument("--min-track", type=int, help="trusted-core track length (default 3)")
    g.add_argument("--error-quantile", type=float, help="trusted-core error quantile (default 0.9)")
    _bool_flag(g, "include-removed-ids", "list removed point ids in the report")


def _cluster_flags(p) -> None:
    g = p.add_argument_group("cluster")
    g.add_argument("--k-min", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--forward-convention", choices=("neg-z", "pos-z"),
                   help="camera viewing axis used for angular terms (default neg-z)")


def _fuse_flags(p) -> None:
    g = p.add_argument_group("fuse")
    g.add_argument("--overlap-threshold", type=float)
    _bool_flag(g, "strict-visibility", "only label points whose track includes the view")
    _bool_flag(g, "y-flip", "negate the camera y axis before projecting")
    g.add_argument("--projection-forward", choices=("neg-z", "pos-z"),
                   help="camera axis points project along (default pos-z)")


def _densify_flags(p) -> None:
    g = p.add_argument_group("densify")
    g.add_argument("--gamma", type=float)
    g.add_argument("--n-min", type=int)
    g.add_argument("--mode", choices=("isotropic", "covariance"))


def _evaluate_flags(p) -> None:
    g = p.add_argument_group("evaluate")
    g.add_argument("--lambda-dino", type=float)
    g.add_argument("--lambda-dssim", type=float)
    g.add_argument("--dino-sign", choices=("dissimilarity", "paper_literal"))
    g.add_argument("--scene-name")


STAGE_FLAGS = {
    "filter": (_filter_flags,),
    "cluster": (_cluster_flags,),
    "fuse": (_fuse_flags, _cluster_flags),
    "densify": (_densify_flags,),
    "evaluate": (_evaluate_flags,),
    "pipeline": (_filter_flags, _cluster_flags, _fuse_flags, _densify_flags, _evaluate_flags),
}
OVERRIDE_KEYS = (
    "model_dir", "mask_dir", "embedding_dir", "image_dir", "reference_ply",
    "hull_threshold", "min_track", "error_quantile", "include_removed_ids",
    "k_min", "alpha", "beta", "forward_convention",
    "overlap_threshold", "strict_visibility", "y_flip", "projection_forward",
    "gamma", "n_min", "mode",
    "lambda_dino", "lambda_dssim", "dino_sign", "scene_name",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatprep", description="Scene preprocessing for splatting pipelines.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags()
    inputs = _input_flags()

    synth = sub.add_parser("synth", parents=[common], help="write a synthetic dataset with ground truth")
    d = SynthConfig()
    synth.add_argument("--n-cameras", type=int, default=d.n_cameras)
    synth.add_argument("--camera-rig", choices=RIGS, default=d.camera_rig)
    synth.add_argument("--n-points", type=int, default=d.n_points)
    synth.add_argument("--n-segments", type=int, default=d.n_segments)
    synth.add_argument("--outlier-fraction", type=float, default=d.outlier_fraction)
    synth.add_argument("--outlier-radius-multiplier", type=float, default=d.outlier_radius_multiplier)
    synth.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"), default=d.image_size)
    synth.add_argument("--segment-layout", choices=LAYOUTS, default=d.segment_layout)

    helps = {"filter": "remove points far from the trusted-core convex hull",
             "cluster": "cluster cameras and pick representative views",
             "fuse": "fuse per-view masks into global segments",
             "densify": "add points to under-sampled segments",
             "evaluate": "compute image, embedding and point-set metrics",
             "pipeline": "run several stages in order"}
    for name, adders in STAGE_FLAGS.items():
        p = sub.add_parser(name, parents=[common, inputs], help=helps[name])
        for add in adders:
            add(p)
        if name == "pipeline":
            p.add_argument("--stages", nargs="+", help="subset of filter cluster fuse densify evaluate")
        if name == "evaluate":
            p.add_argument("--image-pair", nargs=2, action="append", metavar=("GT", "RENDER"), default=[],
                           help="PNG pair; may be repeated")
            p.add_argument("--embedding-pair", nargs=2, action="append", metavar=("GT", "RENDER"), default=[],
                           help="embedding file pair; may be repeated")
    return parser


def _configure_logging(args) -> None:
    level = logging.WARNING if args.quiet else logging.INFO if args.verbose == 0 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)


def config_from_args(args) -> PipelineConfig:
    cfg = validate_config(args.config) if args.config else PipelineConfig()
    changes = {k: getattr(args, k, None) for k in OVERRIDE_KEYS}
    changes.update(seed=args.seed, threads=args.threads, output_dir=args.output)
    if args.command == "pipeline":
        changes["stages"] = args.stages
    else:
        changes["stages"] = (args.command,)
    return override(cfg, **changes)


def _run_synth(args) -> int:
    cfg = SynthConfig(n_cameras=args.n_cameras, camera_rig=args.camera_rig, n_points=args.n_points,
                      n_segments=args.n_segments, outlier_fraction=args.outlier_fraction,
                      outlier_radius_multiplier=args.outlier_radius_multiplier,
                      seed=args.seed if args.seed is not None else 0, image_size=tuple(args.image_size),
                      segment_layout=args.segment_layout)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = write_dataset(make_scene(cfg), args.output or Path("synth_scene"))
    print(f"wrote synthetic dataset to {out}")
    return 0


def _run_adhoc_evaluate(args, cfg: PipelineConfig) -> int:
    def triples(pairs):
        return [(Path(gt).stem, Path(gt), Path(r)) for gt, r in pairs]

    weights = LossWeights(cfg.lambda_dino, cfg.lambda_dssim, cfg.dino_sign)
    report = evaluate_pairs(MetricReport(), cfg.scene_name, weights,
                            triples(args.image_pair), triples(args.embedding_pair))
    out = cfg.output_dir / "evaluate"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(report.format_table())
    (out / "metrics.records").write_text(report.format_records())
    sys.stdout.write(report.format_table())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        if args.command == "synth":
            return _run_synth(args)
        cfg = config_from_args(args)
        if args.command == "evaluate" and (args.image_pair or args.embedding_pair):
            return _run_adhoc_evaluate(args, cfg)
        run = run_pipeline(cfg)
        print(f"completed {', '.join(run.stages)}; manifest at {run.manifest}")
        return 0
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"config error: {line}", file=sys.stderr)
        return exc.exit_code
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SplatPrepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Stage runner. Stages talk to each other only through files in the output directory.

Layout under ``output_dir``::

    filter/filtered.ply  filter/filter_report.txt
    cluster/selection.txt
    fuse/segment_map.txt  fuse/point_labels.bin
    densify/augmented.ply  densify/densify_report.txt
    evaluate/metrics.txt  evaluate/metrics.records
    manifest.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from splatprep import __version__
from splatprep.config import STAGES, PipelineConfig, check_paths
from splatprep.densify import densify_cloud
from splatprep.errors import DataError, NumericError, SplatPrepError
from splatprep.fusion import fuse_views, read_segment_map
from splatprep.hull import filter_model
from splatprep.metrics import (
    LossWeights,
    MetricReport,
    cosine,
    dino_loss,
    l1,
    l_photo,
    load_image,
    point_set_distance,
    psnr,
    ssim,
)
from splatprep.scene_io import load_embedding, load_mask, read_model, read_ply_arrays, write_ply_arrays
from splatprep.view_select import extract_features, parse_selection, select_views

logger = logging.getLogger(__name__)

ARTIFACTS = {
    "filter": ("filter/filtered.ply", "filter/filter_report.txt"),
    "cluster": ("cluster/selection.txt",),
    "fuse": ("fuse/segment_map.txt", "fuse/point_labels.bin"),
    "densify": ("densify/augmented.ply", "densify/densify_report.txt"),
    "evaluate": ("evaluate/metrics.txt", "evaluate/metrics.records"),
}
MASK_SUFFIXES = (".png", ".npy")
EMBEDDING_SUFFIX = ".emb"


class StageError(SplatPrepError):
    """A stage failed; keeps the exit code of the underlying cause."""

    def __init__(self, stage: str, cause: BaseException, exit_code: int):
        self.stage = stage
        self.cause = cause
        self.exit_code = exit_code
        super().__init__(f"stage {stage} failed: {cause}")


@dataclass(frozen=True)
class PipelineRun:
    output_dir: Path
    stages: tuple[str, ...]
    timings: dict[str, float]
    manifest: Path


def _require(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise DataError(f"{stage} needs {path}, which does not exist; run the earlier stage first")
    return path


def _load_cloud(out: Path, stage: str) -> dict[str, np.ndarray]:
    cols = read_ply_arrays(_require(out / ARTIFACTS["filter"][0], stage))
    if "point_id" not in cols:
        raise DataError(f"{stage}: filtered cloud lacks the point_id property")
    return cols


def _xyz(cols) -> np.ndarray:
    return np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)


def _rgb(cols) -> np.ndarray:
    return np.stack([cols["red"], cols["green"], cols["blue"]], axis=1).astype(np.uint8)


def run_filter(cfg: PipelineConfig) -> None:
    out = cfg.output_dir / "filter"
    out.mkdir(parents=True, exist_ok=True)
    model = read_model(cfg.model_dir)
    if not model.points:
        raise DataError("model has no 3D points to filter")
    result = filter_model(model, rel_threshold=cfg.hull_threshold, min_track=cfg.min_track,
                          max_error_quantile=cfg.error_quantile)
    ids, xyz, rgb, _, _ = model.point_arrays(result.kept)
    write_ply_arrays(out / "filtered.ply", xyz, rgb, {"point_id": ids.astype(np.uint32)})
    (out / "filter_report.txt").write_text(result.format(cfg.include_removed_ids))
    logger.info("filter: kept %d, removed %d", len(result.kept), len(result.removed))


def run_cluster(cfg: PipelineConfig) -> None:
    out = cfg.output_dir / "cluster"
    out.mkdir(parents=True, exist_ok=True)
    model = read_model(cfg.model_dir)
    features = extract_features(model, cfg.forward_convention)
    result = select_views(features, cfg.k_min, cfg.alpha, cfg.beta, cfg.seed, cfg.threads)
    (out / "selection.txt").write_text(result.format())
    logger.info("cluster: k=%d, representatives %s", result.chosen_k, ", ".join(result.representatives))


def _find_mask(mask_dir: Path, view: str) -> Path:
    stem = Path(view).stem
    for suffix in MASK_SUFFIXES:
        p = mask_dir / (stem + suffix)
        if p.is_file():
            return p
    raise DataError(f"no mask for view {view} in {mask_dir}")


def run_fuse(cfg: PipelineConfig) -> None:
    out = cfg.output_dir / "fuse"
    out.mkdir(parents=True, exist_ok=True)
    selection = parse_selection(_require(cfg.output_dir / ARTIFACTS["cluster"][0], "fuse").read_text())
    cloud = _load_cloud(cfg.output_dir, "fuse")
    model = read_model(cfg.model_dir)
    views = list(selection.representatives)
    masks = {}
    for view in views:
        pose = model.image_by_name(view)
        cam = model.cameras[pose.camera_id]
        masks[view] = load_mask(_find_mask(cfg.mask_dir, view), view_name=view,
                                expected_size=(cam.width, cam.height))
    seg_map = fuse_views(model, masks, views, point_ids=cloud["point_id"].astype(np.int64),
                         positions=_xyz(cloud), overlap_threshold=cfg.overlap_threshold,
                         strict_visibility=cfg.strict_visibility, forward=cfg.projection_forward,
                         y_flip=cfg.y_flip, threads=cfg.threads)
    seg_map.write(out / "segment_map.txt", out / "point_labels.bin")
    logger.info("fuse: %d global segments, %d labeled points", len(seg_map.global_ids), len(seg_map.point_labels))


def run_densify(cfg: PipelineConfig) -> None:
    out = cfg.output_dir / "densify"
    out.mkdir(parents=True, exist_ok=True)
    cloud = _load_cloud(cfg.output_dir, "densify")
    text_path, labels_path = (cfg.output_dir / p for p in ARTIFACTS["fuse"])
    seg_map = read_segment_map(_require(text_path, "densify"), _require(labels_path, "densify"))
    ids = cloud["point_id"].astype(np.int64)
    labels = np.array([seg_map.point_labels.get(int(i), -1) for i in ids], dtype=np.int64)
    dense, report = densify_cloud(_xyz(cloud), _rgb(cloud), labels, seg_map.segment_areas(), cfg.gamma,
                                  cfg.n_min, cfg.mode, cfg.seed, cfg.min_existing)
    n_new = len(dense.positions) - len(ids)
    extra = {
        "point_id": np.concatenate([ids, np.zeros(n_new, dtype=np.int64)]).astype(np.uint32),
        "segment": dense.labels.astype(np.int32),
        "added": dense.added.astype(np.uint8),
    }
    write_ply_arrays(out / "augmented.ply", dense.positions, dense.colors, extra)
    (out / "densify_report.txt").write_text(report.format())


def _pairs(root: Path, suffixes: tuple[str, ...]) -> list[tuple[str, Path, Path]]:
    gt_dir, r_dir = root / "gt", root / "render"
    if not gt_dir.is_dir() or not r_dir.is_dir():
        raise DataError(f"{root} must contain gt/ and render/ subdirectories")
    pairs = []
    for gt in sorted(p for p in gt_dir.iterdir() if p.suffix.lower() in suffixes):
        r = r_dir / gt.name
        if not r.is_file():
            raise DataError(f"{gt.name} has no rendered counterpart in {r_dir}")
        pairs.append((gt.stem, gt, r))
    return pairs


def evaluate_pairs(report: MetricReport, scene: str, weights: LossWeights,
                   image_pairs=(), embedding_pairs=()) -> MetricReport:
    """Add per-view rows for ``(view, gt_path, render_path)`` image and embedding pairs."""
    photo = {}
    for view, gt_path, r_path in image_pairs:
        gt, r = load_image(gt_path), load_image(r_path)
        photo[view] = l_photo(gt, r, weights)
        report.add(scene, view, l1=l1(gt, r), ssim=ssim(gt, r), psnr=psnr(gt, r), l_photo=photo[view])
    for view, gt_path, r_path in embedding_pairs:
        f_gt, f_r = load_embedding(gt_path), load_embedding(r_path)
        dino = dino_loss(f_gt, f_r, weights)
        report.add(scene, view, cosine=cosine(f_gt, f_r), l_dino=dino)
        if view in photo:
            report.add(scene, view, l_total=photo[view] + dino)
    return report


def run_evaluate(cfg: PipelineConfig) -> None:
    out = cfg.output_dir / "evaluate"
    out.mkdir(parents=True, exist_ok=True)
    weights = LossWeights(cfg.lambda_dino, cfg.lambda_dssim, cfg.dino_sign)
    report = MetricReport()
    images = _pairs(cfg.image_dir, (".png",)) if cfg.image_dir else []
    embeddings = _pairs(cfg.embedding_dir, (EMBEDDING_SUFFIX,)) if cfg.embedding_dir else []
    evaluate_pairs(report, cfg.scene_name, weights, images, embeddings)

    augmented = cfg.output_dir / ARTIFACTS["densify"][0]
    filtered = cfg.output_dir / ARTIFACTS["filter"][0]
    data = augmented if augmented.is_file() else filtered if filtered.is_file() else None
    reference = cfg.reference_ply or (filtered if filtered.is_file() else None)
    if data is not None and reference is not None:
        d = _xyz(read_ply_arrays(data))
        s = _xyz(read_ply_arrays(reference))
        dist = point_set_distance(d, s)
        report.add(cfg.scene_name, "cloud", mean_d2s=dist.mean_d2s, mean_s2d=dist.mean_s2d, overall=dist.overall)
        report.notes.append(f"cloud: {data.name} against {reference.name}")
        report.notes.append("d2s/s2d are point-to-point nearest-neighbor distances, not point-to-mesh")
    if not report.rows:
        report.notes.append("no image, embedding or point-cloud pairs available")
    (out / "metrics.txt").write_text(report.format_table())
    (out / "metrics.records").write_text(report.format_records())


RUNNERS = {"filter": run_filter, "cluster": run_cluster, "fuse": run_fuse,
           "densify": run_densify, "evaluate": run_evaluate}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hashes(cfg: PipelineConfig) -> dict[str, str]:
    hashes = {}
    for key in ("model_dir", "mask_dir", "image_dir", "embedding_dir"):
        root = getattr(cfg, key)
        if root is None or not root.is_dir():
            continue
        for p in sorted(q for q in root.rglob("*") if q.is_file()):
            hashes[f"{key}/{p.relative_to(root).as_posix()}"] = _sha256(p)
    if cfg.reference_ply is not None and cfg.reference_ply.is_file():
        hashes["reference_ply"] = _sha256(cfg.reference_ply)
    return hashes


def _deterministic_section(cfg: PipelineConfig, completed: list[str], failed: str | None) -> dict:
    params = cfg.parameters()
    # where outputs land does not change what they contain
    params.pop("output_dir")
    artifacts = {}
    for stage in completed:
        for rel in ARTIFACTS[stage]:
            artifacts[rel] = _sha256(cfg.output_dir / rel)
    return {
        "versions": {"splatprep": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "seed": cfg.seed,
        "parameters": params,
        "inputs": input_hashes(cfg),
        "stages_completed": completed,
        "stage_failed": failed,
        "artifacts": artifacts,
    }


def write_manifest(cfg: PipelineConfig, completed: list[str], timings: dict[str, float],
                   failed: str | None = None) -> Path:
    manifest = {
        "deterministic": _deterministic_section(cfg, completed, failed),
        "timing": {"stage_wall_seconds": timings, "output_dir": str(cfg.output_dir)},
    }
    path = cfg.output_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, SplatPrepError):
        return exc.exit_code
    if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError)):
        return NumericError.exit_code
    return DataError.exit_code


def run_pipeline(cfg: PipelineConfig) -> PipelineRun:
    """Validate inputs, then run the requested stages in canonical order.

    A failing stage raises :class:`StageError`; artifacts of the stages
    that finished stay on disk and the manifest records the failure.
    """
    check_paths(cfg)
    stages = [s for s in STAGES if s in cfg.stages]
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    completed, timings = [], {}
    for stage in stages:
        start = time.perf_counter()
        try:
            RUNNERS[stage](cfg)
        except (SplatPrepError, ValueError, KeyError, OSError, np.linalg.LinAlgError, FloatingPointError) as exc:
            timings[stage] = time.perf_counter() - start
            write_manifest(cfg, completed, timings, failed=stage)
            raise StageError(stage, exc, _exit_code_for(exc)) from exc
        timings[stage] = time.perf_counter() - start
        completed.append(stage)
        logger.info("stage %s finished in %.3f s", stage, timings[stage])
    manifest = write_manifest(cfg, completed, timings)
    return PipelineRun(cfg.output_dir, tuple(completed), timings, manifest)

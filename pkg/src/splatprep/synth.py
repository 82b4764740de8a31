"""Synthetic scenes with known ground truth.

Cameras sit on a rig around the origin and look at it. Inliers form one
ball-shaped cluster per segment; outliers sit far outside with a single
observation. Masks are rasterized from the true segments, so fusion and
filtering results can be checked exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation

from splatprep.fusion import project_points
from splatprep.scene_io.colmap import write_model
from splatprep.scene_io.masks import SegmentMask, write_mask
from splatprep.scene_io.model import CameraIntrinsics, CameraPose, SceneModel, ScenePoint, rotmat2qvec

RIGS = ("ring", "sphere", "two-rings")
LAYOUTS = ("stacked", "scattered")
MIN_SEGMENT_POINTS = 5


@dataclass(frozen=True)
class SynthConfig:
    n_cameras: int = 12
    camera_rig: str = "ring"
    n_points: int = 1000
    n_segments: int = 6
    outlier_fraction: float = 0.05
    outlier_radius_multiplier: float = 10.0
    seed: int = 0
    image_size: tuple[int, int] = (320, 240)
    # stacked clusters never overlap in ring views; scattered ones may
    segment_layout: str = "stacked"
    camera_distance: float = 4.0

    def validate(self) -> None:
        if self.camera_rig not in RIGS:
            raise ValueError(f"camera_rig must be one of {RIGS}")
        if self.segment_layout not in LAYOUTS:
            raise ValueError(f"segment_layout must be one of {LAYOUTS}")
        if min(self.n_cameras, self.n_points, self.n_segments) < 0:
            raise ValueError("counts must be >= 0")
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must be in [0, 1]")
        if not self.outlier_radius_multiplier > 1:
            raise ValueError("outlier_radius_multiplier must be > 1")
        if self.n_points < self.n_segments * MIN_SEGMENT_POINTS:
            raise ValueError(f"n_points={self.n_points} cannot give {self.n_segments} segments "
                             f"{MIN_SEGMENT_POINTS} points each")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    scene: SceneModel
    true_outlier_ids: frozenset[int]
    true_segment_of_point: dict[int, int]
    masks: dict[str, SegmentMask]
    # view name -> {segment index: local mask label}
    local_labels: dict[str, dict[int, int]]
    config: SynthConfig


def look_at(center: np.ndarray, target=np.zeros(3)) -> np.ndarray:
    """World-to-camera rotation for a +z-forward, y-down camera."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward])


def rig_centers(rig: str, n: int, radius: float) -> np.ndarray:
    if rig == "ring":
        theta = 2 * np.pi * np.arange(n) / max(n, 1)
        return radius * np.stack([np.cos(theta), np.sin(theta), np.zeros(n)], axis=1)
    if rig == "two-rings":
        upper = n // 2
        out = []
        for count, height, phase in ((n - upper, -0.25, 0.0), (upper, 0.25, 0.5)):
            theta = 2 * np.pi * (np.arange(count) + phase) / max(count, 1)
            ring = np.sqrt(1 - height ** 2)
            out.append(radius * np.stack([ring * np.cos(theta), ring * np.sin(theta),
                                          np.full(count, height)], axis=1))
        return np.vstack(out)
    # Fibonacci sphere
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / max(n, 1)
    phi = np.pi * (3 - np.sqrt(5)) * i
    r = np.sqrt(1 - z ** 2)
    return radius * np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _segment_sizes(n_points: int, n_segments: int, rng) -> np.ndarray:
    if n_segments == 0:
        return np.zeros(0, dtype=np.int64)
    weights = 3.0 ** -np.arange(n_segments)
    extra = rng.multinomial(n_points - MIN_SEGMENT_POINTS * n_segments, weights / weights.sum())
    return MIN_SEGMENT_POINTS + extra


def _segment_layout(cfg: SynthConfig, sizes: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Cluster centers and radii; radius grows as sqrt(size) so mask area keeps up with point count."""
    n = cfg.n_segments
    width, height = cfg.image_size
    weight = np.sqrt(np.maximum(sizes, 1).astype(np.float64))
    if cfg.segment_layout == "stacked":
        # stack along z inside a window spanning most of the vertical field of view
        half = 0.65 * cfg.camera_distance * height / (2 * width)
        radii = 0.6 * half * weight / weight.sum() if n else np.zeros(0)
        gap = 0.8 * half / (n - 1) if n > 1 else 0.0
        tops = np.cumsum(2 * radii + gap) - gap
        z = tops - radii - half
        return np.stack([np.zeros(n), np.zeros(n), z], axis=1), radii
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * 0.6 * np.cbrt(rng.uniform(size=(n, 1))), 0.2 * weight / weight.max() if n else np.zeros(0)


def _uniform_ball(rng, n: int) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * np.cbrt(rng.uniform(size=(n, 1)))


def make_scene(config: SynthConfig = SynthConfig()) -> GroundTruth:
    config.validate()
    rng = np.random.default_rng(config.seed)
    width, height = config.image_size
    cam = CameraIntrinsics(1, "PINHOLE", width, height, float(width), float(width), width / 2, height / 2)

    poses = []
    for i, c in enumerate(rig_centers(config.camera_rig, config.n_cameras, config.camera_distance)):
        R = look_at(c)
        poses.append(CameraPose(i + 1, f"view_{i:03d}.png", rotmat2qvec(R), -R @ c, 1))

    sizes = _segment_sizes(config.n_points, config.n_segments, rng)
    centers, radii = _segment_layout(config, sizes, rng)
    inliers = np.vstack([centers[s] + radii[s] * _uniform_ball(rng, int(k)) for s, k in enumerate(sizes)]
                        or [np.zeros((0, 3))])
    segment = np.repeat(np.arange(config.n_segments), sizes)
    base_colors = rng.integers(40, 216, size=(max(config.n_segments, 1), 3))
    inlier_rgb = np.clip(base_colors[segment] + rng.integers(-20, 21, size=(len(inliers), 3)), 0, 255)

    n_out = int(round(config.outlier_fraction * config.n_points))
    inlier_radius = float(np.linalg.norm(inliers, axis=1).max()) if len(inliers) else 1.0
    dirs = rng.normal(size=(n_out, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = config.outlier_radius_multiplier * inlier_radius * rng.uniform(1.0, 1.5, size=(n_out, 1))
    outliers = dirs * radii

    positions = np.vstack([inliers, outliers])
    rgb = np.vstack([inlier_rgb, rng.integers(0, 256, size=(n_out, 3))]).astype(np.uint8)
    errors = np.concatenate([rng.uniform(0.05, 0.5, len(inliers)), rng.uniform(0.5, 2.0, n_out)])
    is_outlier = np.concatenate([np.zeros(len(inliers), bool), np.ones(n_out, bool)])
    ids = rng.permutation(len(positions)) + 1
    outlier_view = rng.integers(0, max(len(poses), 1), size=n_out)

    tracks: list[list[tuple[int, int]]] = [[] for _ in range(len(positions))]
    observations = []
    for v, pose in enumerate(poses):
        uv, depth, valid = project_points(positions, cam, pose)
        seen = valid & ~is_outlier
        seen[len(inliers):] = outlier_view == v
        xys, pids = [], []
        for i in np.nonzero(seen)[0]:
            tracks[i].append((pose.image_id, len(pids)))
            xys.append(uv[i] if depth[i] > 0 else (-1.0, -1.0))
            pids.append(ids[i])
        observations.append((np.array(xys, dtype=np.float64).reshape(-1, 2), np.array(pids, dtype=np.int64)))
    images = {}
    for pose, (xys, pids) in zip(poses, observations):
        images[pose.image_id] = CameraPose(pose.image_id, pose.name, pose.qvec, pose.tvec, 1, xys, pids)

    points = {int(ids[i]): ScenePoint(int(ids[i]), positions[i], rgb[i], float(errors[i]),
                                      np.array(tracks[i], dtype=np.int64).reshape(-1, 2))
              for i in range(len(positions))}
    scene = SceneModel({1: cam}, images, points)

    masks, local = {}, {}
    for pose in poses:
        perm = rng.permutation(config.n_segments) + 1
        local[pose.name] = {s: int(perm[s]) for s in range(config.n_segments)}
        masks[pose.name] = _render_mask(pose, cam, inliers, segment, perm)

    return GroundTruth(
        scene=scene,
        true_outlier_ids=frozenset(int(i) for i in ids[is_outlier]),
        true_segment_of_point={int(ids[i]): int(segment[i]) for i in range(len(inliers))},
        masks=masks,
        local_labels=local,
        config=config,
    )


def _render_mask(pose, cam, inliers, segment, perm) -> SegmentMask:
    uv, depth, valid = project_points(inliers, cam, pose)
    labels = np.zeros((cam.height, cam.width), dtype=np.uint16)
    idx = np.nonzero(valid)[0]
    cols = uv[idx, 0].astype(np.int64)
    rows = uv[idx, 1].astype(np.int64)
    cells = rows * cam.width + cols
    # nearest point claims its cell
    order = np.lexsort((depth[idx], cells))
    _, first = np.unique(cells[order], return_index=True)
    winners = order[first]
    labels[rows[winners], cols[winners]] = perm[segment[idx[winners]]]
    core = labels.copy()
    for s in range(len(perm)):
        grown = binary_dilation(core == perm[s], structure=np.ones((3, 3), bool))
        labels[grown & (labels == 0)] = perm[s]
    return SegmentMask.from_labels(pose.name, labels)


def write_dataset(gt: GroundTruth, out_dir) -> Path:
    """Write ``sparse/`` (COLMAP text), ``masks/`` and ``ground_truth.json``."""
    out_dir = Path(out_dir)
    write_model(gt.scene, out_dir / "sparse", format="text")
    mask_dir = out_dir / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for name, mask in sorted(gt.masks.items()):
        write_mask(mask, mask_dir / (Path(name).stem + ".png"))
    truth = {
        "config": asdict(gt.config),
        "true_outlier_ids": sorted(gt.true_outlier_ids),
        "true_segment_of_point": {str(k): v for k, v in sorted(gt.true_segment_of_point.items())},
        "local_labels": {view: {str(s): lab for s, lab in labels.items()}
                         for view, labels in sorted(gt.local_labels.items())},
    }
    (out_dir / "ground_truth.json").write_text(json.dumps(truth, indent=1) + "\n")
    return out_dir

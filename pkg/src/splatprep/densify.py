"""Mask-area-guided densification of segmented point clouds.

Each global segment gets a target point count that grows with the square
root of its mask area. Segments below target (and holding at least
``MIN_EXISTING`` points) receive new points drawn around randomly chosen
existing ones; colors are blended from the nearest existing neighbors.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from splatprep.errors import NumericError

logger = logging.getLogger(__name__)

GAMMA = 0.1
N_MIN = 10
MIN_EXISTING = 5
SIGMA_SCALE = 0.5
SIGMA_FLOOR = 1e-12
COVARIANCE_SCALE = 0.01
COLOR_NEIGHBORS = 3
MODES = ("isotropic", "covariance")


def target_count(area: float, gamma: float = GAMMA, n_min: int = N_MIN) -> int:
    if area < 0:
        raise ValueError(f"area must be >= 0, got {area}")
    return max(math.floor(math.sqrt(area) * gamma), n_min)


def augmentation_need(n_target: int, existing: int, min_existing: int = MIN_EXISTING) -> int:
    if existing < min_existing:
        return 0
    return max(n_target - existing, 0)


def adaptive_sigma(points) -> float:
    """Half the mean nearest-neighbor spacing of ``points``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 2:
        raise ValueError("need at least 2 points to estimate density")
    dist, _ = cKDTree(points).query(points, k=2)
    return max(SIGMA_SCALE * float(dist[:, 1].mean()), SIGMA_FLOOR)


def interpolate_colors(points, colors, queries, k: int = COLOR_NEIGHBORS) -> np.ndarray:
    """Inverse-distance-weighted blend of the ``k`` nearest source colors."""
    points = np.asarray(points, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    k = min(k, len(points))
    dist, idx = cKDTree(points).query(queries, k=k)
    dist = dist.reshape(len(queries), k)
    idx = idx.reshape(len(queries), k)
    exact = dist[:, 0] == 0
    w = 1.0 / np.where(dist > 0, dist, 1.0)
    w[exact] = 0.0
    w[exact, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    blended = np.einsum("nk,nkc->nc", w, colors[idx])
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)


def augment_segment(points, colors, n_add: int, mode: str = "isotropic", seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n_add`` new (position, color) samples around a segment's points.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if len(points) < MIN_EXISTING:
        raise ValueError(f"segment has {len(points)} points, need at least {MIN_EXISTING}")
    if n_add < 0:
        raise ValueError("n_add must be >= 0")
    if n_add == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    base = points[rng.integers(0, len(points), size=n_add)]
    if mode == "isotropic":
        noise = rng.normal(0.0, adaptive_sigma(points), size=(n_add, 3))
    else:
        cov = np.cov(points, rowvar=False)
        if not np.all(np.isfinite(cov)):
            raise NumericError("segment covariance is not finite")
        cov = COVARIANCE_SCALE * (cov + 1e-12 * np.trace(cov) * np.eye(3))
        w, V = np.linalg.eigh(cov)
        noise = rng.standard_normal((n_add, 3)) @ (V * np.sqrt(np.clip(w, 0.0, None))).T
    new_points = base + noise
    return new_points, interpolate_colors(points, colors, new_points)


@dataclass(frozen=True)
class SegmentStats:
    global_id: int
    area: int
    existing: int
    n_target: int
    n_add: int
    sigma: float


@dataclass(frozen=True, eq=False)
class DensifyReport:
    points_added_total: int
    segments_touched: int
    per_segment: tuple[SegmentStats, ...]

    def format(self) -> str:
        lines = ["# densification report",
                 f"points_added_total {self.points_added_total}",
                 f"segments_touched {self.segments_touched}",
                 "# GLOBAL_ID AREA EXISTING N_TARGET N_ADD SIGMA"]
        lines += [f"segment {s.global_id} {s.area} {s.existing} {s.n_target} {s.n_add} {s.sigma!r}"
                  for s in self.per_segment]
        return "\n".join(lines) + "\n"


def parse_densify_report(text: str) -> DensifyReport:
    total = touched = 0
    stats = []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        key, *rest = line.split()
        if key == "points_added_total":
            total = int(rest[0])
        elif key == "segments_touched":
            touched = int(rest[0])
        elif key == "segment":
            gid, area, existing, n_target, n_add = map(int, rest[:5])
            stats.append(SegmentStats(gid, area, existing, n_target, n_add, float(rest[5])))
    return DensifyReport(total, touched, tuple(stats))


@dataclass(frozen=True, eq=False)
class DensifiedCloud:
    positions: np.ndarray
    colors: np.ndarray
    labels: np.ndarray     # global id per point, -1 if unlabeled
    added: np.ndarray      # True for generated points


def densify_cloud(positions, colors, labels, segment_areas: dict[int, int], gamma: float = GAMMA,
                  n_min: int = N_MIN, mode: str = "isotropic", seed: int = 0,
                  min_existing: int = MIN_EXISTING) -> tuple[DensifiedCloud, DensifyReport]:
    """Densify every labeled segment toward its area-derived target.

    ``labels`` holds a global id per point (-1 for unlabeled). Segments
    are processed in ascending id with generator seed ``seed ^ id``.
    Input points are never moved; new points are appended.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.int64)
    new_pos, new_col, new_lab = [], [], []
    stats = []
    for gid in sorted(segment_areas):
        members = np.nonzero(labels == gid)[0]
        existing = len(members)
        area = int(segment_areas[gid])
        n_target = target_count(area, gamma, n_min)
        n_add = augmentation_need(n_target, existing, min_existing)
        sigma = adaptive_sigma(positions[members]) if existing >= 2 else 0.0
        if n_add > 0:
            try:
                pts, cols = augment_segment(positions[members], colors[members], n_add, mode,
                                            np.random.default_rng(seed ^ gid))
            except (ValueError, NumericError) as exc:
                warnings.warn(f"segment {gid} skipped: {exc}", RuntimeWarning, stacklevel=2)
                n_add = 0
            else:
                new_pos.append(pts)
                new_col.append(cols)
                new_lab.append(np.full(n_add, gid, dtype=np.int64))
        stats.append(SegmentStats(gid, area, existing, n_target, n_add, sigma))

    added_total = sum(s.n_add for s in stats)
    report = DensifyReport(added_total, sum(1 for s in stats if s.n_add > 0), tuple(stats))
    cloud = DensifiedCloud(
        positions=np.vstack([positions, *new_pos]),
        colors=np.vstack([colors, *new_col]).astype(np.uint8),
        labels=np.concatenate([labels, *new_lab]),
        added=np.concatenate([np.zeros(len(positions), dtype=bool), np.ones(added_total, dtype=bool)]),
    )
    logger.info("densify: %d points added across %d segments", report.points_added_total, report.segments_touched)
    return cloud, report

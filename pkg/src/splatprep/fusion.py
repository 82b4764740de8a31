"""Multi-view segment fusion.

Points are projected into each representative view, pick up the label
of the mask cell they land in, and per-view segments whose 3D point sets
overlap strongly are merged into global segments. A point keeps only
the first global segment it is assigned to.
"""

from __future__ import annotations

import logging
import struct
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from splatprep.errors import DimensionMismatchError, FormatError
from splatprep.scene_io.model import CameraIntrinsics, CameraPose

logger = logging.getLogger(__name__)

MIN_DEPTH = 1e-9
DEFAULT_OVERLAP = 0.5


class Projection(NamedTuple):
    view_name: str
    point_id: int
    u: float
    v: float
    depth: float


def _camera_frame(points: np.ndarray, pose: CameraPose, forward: str, y_flip: bool) -> np.ndarray:
    pc = points @ pose.R.T + pose.tvec
    if forward == "neg-z":
        pc[:, 2] = -pc[:, 2]
    elif forward != "pos-z":
        raise ValueError(f"unknown forward convention {forward!r}")
    if y_flip:
        pc[:, 1] = -pc[:, 1]
    return pc


def project_points(points, intrinsics: CameraIntrinsics, pose: CameraPose, *, forward: str = "pos-z",
                   y_flip: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized pinhole projection.

    Returns ``(uv, depth, valid)``; ``valid`` is False for points behind
    the camera or outside ``[0, width) x [0, height)``.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pc = _camera_frame(P, pose, forward, y_flip)
    depth = pc[:, 2]
    in_front = depth > MIN_DEPTH
    safe = np.where(in_front, depth, 1.0)
    u = intrinsics.fx * pc[:, 0] / safe + intrinsics.cx
    v = intrinsics.fy * pc[:, 1] / safe + intrinsics.cy
    valid = in_front & (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
    return np.stack([u, v], axis=1), depth, valid


def project_point(P, intrinsics: CameraIntrinsics, pose: CameraPose, *, point_id: int = -1,
                  view_name: str | None = None, forward: str = "pos-z", y_flip: bool = False) -> Projection | None:
    uv, depth, valid = project_points(P, intrinsics, pose, forward=forward, y_flip=y_flip)
    if not valid[0]:
        return None
    return Projection(view_name or pose.name, point_id, float(uv[0, 0]), float(uv[0, 1]), float(depth[0]))


def unproject_points(uv, depth, intrinsics: CameraIntrinsics, pose: CameraPose, *, forward: str = "pos-z",
                     y_flip: bool = False) -> np.ndarray:
    """Inverse of :func:`project_points` given pixel coordinates and depth."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    depth = np.asarray(depth, dtype=np.float64).reshape(-1)
    pc = np.empty((len(uv), 3))
    pc[:, 0] = (uv[:, 0] - intrinsics.cx) / intrinsics.fx * depth
    pc[:, 1] = (uv[:, 1] - intrinsics.cy) / intrinsics.fy * depth
    pc[:, 2] = depth
    if y_flip:
        pc[:, 1] = -pc[:, 1]
    if forward == "neg-z":
        pc[:, 2] = -pc[:, 2]
    return (pc - pose.tvec) @ pose.R


def assign_view_labels(model, view_name: str, mask, *, point_ids=None, positions=None,
                       strict_visibility: bool = False, forward: str = "pos-z",
                       y_flip: bool = False) -> dict[int, int]:
    """Map point id -> local mask label for every point landing on a labeled cell.

    ``point_ids``/``positions`` restrict the cloud (e.g. after filtering);
    by default all model points are used. With ``strict_visibility`` a
    point is only labeled if its track contains this view.
    """
    pose = model.image_by_name(view_name)
    cam = model.cameras[pose.camera_id]
    if mask.labels.shape != (cam.height, cam.width):
        raise DimensionMismatchError(
            f"mask for {view_name} is {mask.width}x{mask.height}, camera is {cam.width}x{cam.height}")
    if point_ids is None:
        point_ids = np.array(sorted(model.points), dtype=np.int64)
    point_ids = np.asarray(point_ids, dtype=np.int64)
    if positions is None:
        positions = np.array([model.points[int(i)].xyz for i in point_ids]).reshape(-1, 3)

    uv, _, valid = project_points(positions, cam, pose, forward=forward, y_flip=y_flip)
    if strict_visibility:
        seen = np.array([int(i) in model.points and pose.image_id in model.points[int(i)].image_ids
                         for i in point_ids], dtype=bool)
        valid &= seen
    idx = np.nonzero(valid)[0]
    cols = np.floor(uv[idx, 0]).astype(np.int64)
    rows = np.floor(uv[idx, 1]).astype(np.int64)
    labels = mask.labels[rows, cols]
    hit = labels > 0
    return {int(pid): int(lab) for pid, lab in zip(point_ids[idx[hit]], labels[hit])}


class UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


@dataclass(eq=False)
class SegmentMap:
    per_view_links: dict[tuple[str, int], int]
    point_labels: dict[int, int]
    merged_from: dict[int, list[tuple[str, int]]]
    # pixel area of each (view, local label); feeds densification
    link_areas: dict[tuple[str, int], int] = field(default_factory=dict)

    @property
    def global_ids(self) -> list[int]:
        return sorted(self.merged_from)

    def segment_areas(self) -> dict[int, int]:
        """Largest linked mask area per global id."""
        return {gid: max((self.link_areas.get(m, 0) for m in members), default=0)
                for gid, members in self.merged_from.items()}

    def format(self) -> str:
        lines = ["# segment map", f"global_segments {len(self.merged_from)}",
                 f"labeled_points {len(self.point_labels)}", "# GLOBAL_ID LOCAL_LABEL AREA VIEW"]
        for gid in self.global_ids:
            for view, label in self.merged_from[gid]:
                lines.append(f"{gid} {label} {self.link_areas.get((view, label), 0)} {view}")
        return "\n".join(lines) + "\n"

    def point_labels_bytes(self) -> bytes:
        rec = np.array(sorted(self.point_labels.items()), dtype=np.int64).reshape(-1, 2)
        out = np.zeros(len(rec), dtype=[("pid", "<u8"), ("gid", "<u4")])
        out["pid"], out["gid"] = rec[:, 0], rec[:, 1]
        return out.tobytes()

    def write(self, text_path, labels_path) -> None:
        Path(text_path).write_text(self.format())
        Path(labels_path).write_bytes(self.point_labels_bytes())


def read_point_labels(blob: bytes, source: str = "point_labels.bin") -> dict[int, int]:
    size = struct.calcsize("<QI")
    if len(blob) % size:
        raise FormatError(f"length {len(blob)} is not a multiple of {size}", source=source, offset=len(blob))
    rec = np.frombuffer(blob, dtype=[("pid", "<u8"), ("gid", "<u4")])
    return {int(p): int(g) for p, g in zip(rec["pid"], rec["gid"])}


def read_segment_map(text_path, labels_path) -> SegmentMap:
    text_path = Path(text_path)
    links, merged, areas = {}, defaultdict(list), {}
    for lineno, line in enumerate(text_path.read_text().splitlines(), 1):
        if not line or line.startswith("#") or line.split()[0] in ("global_segments", "labeled_points"):
            continue
        parts = line.split(" ", 3)
        if len(parts) != 4:
            raise FormatError("expected GLOBAL_ID LOCAL_LABEL AREA VIEW", source=text_path.name, line=lineno)
        try:
            gid, label, area = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise FormatError(f"bad record {line!r}", source=text_path.name, line=lineno) from None
        key = (parts[3], label)
        links[key] = gid
        merged[gid].append(key)
        areas[key] = area
    labels = read_point_labels(Path(labels_path).read_bytes(), Path(labels_path).name)
    return SegmentMap(links, labels, dict(merged), areas)


def build_global_map(assignments, overlap_threshold: float = DEFAULT_OVERLAP,
                     areas: dict[tuple[str, int], int] | None = None) -> SegmentMap:
    """Fuse per-view label maps into global segments.

    ``assignments`` is an ordered sequence of ``(view_name, {point_id:
    label})``. Segments from different views are linked when
    ``|a & b| / min(|a|, |b|) >= overlap_threshold``; links are closed
    transitively. Global ids are dense and follow first appearance.
    Repeated views are ignored.
    """
    seen_views = set()
    ordered = []
    for view, labels in assignments:
        if view in seen_views:
            logger.info("view %s fused twice; ignoring the repeat", view)
            continue
        seen_views.add(view)
        ordered.append((view, labels))

    members: dict[tuple[str, int], set[int]] = {}
    segment_order = []
    for view, labels in ordered:
        by_label = defaultdict(set)
        for pid, label in labels.items():
            by_label[label].add(pid)
        for label in sorted(by_label):
            members[(view, label)] = by_label[label]
            segment_order.append((view, label))

    uf = UnionFind()
    for seg in segment_order:
        uf.add(seg)
    containing = defaultdict(list)
    for seg in segment_order:
        for pid in members[seg]:
            containing[pid].append(seg)
    shared = defaultdict(int)
    for segs in containing.values():
        for i in range(len(segs)):
            for j in range(i + 1, len(segs)):
                if segs[i][0] != segs[j][0]:
                    shared[(segs[i], segs[j])] += 1
    for (a, b), count in shared.items():
        if count / min(len(members[a]), len(members[b])) >= overlap_threshold:
            uf.union(a, b)

    root_to_gid: dict = {}
    links = {}
    merged = defaultdict(list)
    for seg in segment_order:
        root = uf.find(seg)
        if root not in root_to_gid:
            root_to_gid[root] = len(root_to_gid)
        links[seg] = root_to_gid[root]
        merged[links[seg]].append(seg)

    point_labels: dict[int, int] = {}
    for seg in segment_order:
        gid = links[seg]
        for pid in sorted(members[seg]):
            point_labels.setdefault(pid, gid)

    link_areas = {seg: int(areas[seg]) for seg in segment_order if areas and seg in areas}
    return SegmentMap(links, point_labels, dict(merged), link_areas)


def fuse_views(model, masks: dict, views, *, point_ids=None, positions=None, overlap_threshold=DEFAULT_OVERLAP,
               strict_visibility=False, forward="pos-z", y_flip=False, threads: int = 1) -> SegmentMap:
    """Label points in each view (in parallel) and reduce to a SegmentMap in ``views`` order."""
    def label(view):
        return view, assign_view_labels(model, view, masks[view], point_ids=point_ids, positions=positions,
                                        strict_visibility=strict_visibility, forward=forward, y_flip=y_flip)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            assignments = list(pool.map(label, views))
    else:
        assignments = [label(v) for v in views]
    areas = {(v, lab): a for v in views for lab, a in masks[v].areas.items()}
    return build_global_map(assignments, overlap_threshold, areas)

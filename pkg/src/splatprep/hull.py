"""Convex-hull outlier removal.

A hull is built over a *trusted core* of the sparse cloud (long tracks,
low reprojection error); every point is then judged on its own by its
Euclidean distance to that hull surface, relative to the hull's
bounding-box diagonal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from splatprep.errors import DegenerateHullError

logger = logging.getLogger(__name__)

EPS_SCALE = 1e-9
DEFAULT_MIN_TRACK = 3
DEFAULT_ERROR_QUANTILE = 0.9
DEFAULT_REL_THRESHOLD = 0.05


def bbox_diagonal(points: np.ndarray) -> float:
    if len(points) == 0:
        return 0.0
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def affine_rank(points: np.ndarray, tol: float | None = None) -> int:
    """Dimension of the affine span of ``points`` (0 to 3)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) <= 1:
        return 0
    if tol is None:
        tol = EPS_SCALE * bbox_diagonal(points)
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    return int(np.sum(s > tol * np.sqrt(len(points))))


@dataclass(frozen=True, eq=False)
class ConvexHull3:
    """Triangulated convex hull; interior satisfies ``normals @ x <= offsets``."""

    vertices: np.ndarray     # (V, 3)
    vertex_ids: np.ndarray   # (V,) indices into the input point array
    faces: np.ndarray        # (F, 3) indices into ``vertices``, counter-clockwise seen from outside
    normals: np.ndarray      # (F, 3) outward unit normals
    offsets: np.ndarray      # (F,)
    eps: float

    @property
    def diagonal(self) -> float:
        return bbox_diagonal(self.vertices)

    def plane_excess(self, points) -> np.ndarray:
        """Largest signed plane distance per point (<= 0 means inside)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (points @ self.normals.T - self.offsets).max(axis=1)

    def contains(self, points, tol: float | None = None) -> np.ndarray:
        tol = self.eps if tol is None else tol
        return self.plane_excess(points) <= tol

    def is_watertight(self) -> bool:
        edges: dict[tuple[int, int], int] = {}
        for a, b, c in self.faces:
            for e in ((a, b), (b, c), (c, a)):
                edges[e] = edges.get(e, 0) + 1
        return all(n == 1 and edges.get((b, a)) == 1 for (a, b), n in edges.items())


class _Face:
    __slots__ = ("verts", "normal", "offset", "outside")

    def __init__(self, verts, normal, offset):
        self.verts = verts
        self.normal = normal
        self.offset = offset
        self.outside = np.zeros(0, dtype=np.int64)

    def edges(self):
        a, b, c = self.verts
        return ((a, b), (b, c), (c, a))


def _plane(P, a, b, c):
    n = np.cross(P[b] - P[a], P[c] - P[a])
    n /= np.linalg.norm(n)
    return n, float(n @ P[a])


def _initial_simplex(P: np.ndarray, eps: float) -> list[int]:
    extremes = np.unique(np.concatenate([P.argmin(axis=0), P.argmax(axis=0)]))
    ext = P[extremes]
    d = np.linalg.norm(ext[:, None] - ext[None], axis=2)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    a, b = int(extremes[i]), int(extremes[j])
    ab = P[b] - P[a]
    line_dist = np.linalg.norm(np.cross(P - P[a], ab), axis=1) / np.linalg.norm(ab)
    c = int(np.argmax(line_dist))
    n = np.cross(ab, P[c] - P[a])
    n /= np.linalg.norm(n)
    plane_dist = (P - P[a]) @ n
    d_idx = int(np.argmax(np.abs(plane_dist)))
    if line_dist[c] <= eps or abs(plane_dist[d_idx]) <= eps:
        raise DegenerateHullError(affine_rank(P, eps))
    if plane_dist[d_idx] > 0:
        # keep the fourth vertex below face (a, b, c)
        b, c = c, b
    return [a, b, c, d_idx]


def build_hull(points, eps_scale: float = EPS_SCALE) -> ConvexHull3:
    """Incremental quickhull over ``points`` (N x 3).

    Orientation tests use ``eps = eps_scale * bbox diagonal``; points
    within ``eps`` of a facet plane count as inside. Raises
    :class:`DegenerateHullError` (carrying the affine rank) for coplanar,
    collinear or too-small inputs.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(P)):
        raise ValueError("hull input contains non-finite coordinates")
    diag = bbox_diagonal(P)
    eps = eps_scale * diag
    if len(P) < 4:
        raise DegenerateHullError(affine_rank(P, eps), f"need at least 4 points, got {len(P)}")
    rank = affine_rank(P, eps)
    if rank < 3:
        raise DegenerateHullError(rank)

    a, b, c, d = _initial_simplex(P, eps)
    faces: dict[int, _Face] = {}
    edge_map: dict[tuple[int, int], int] = {}
    next_id = 0

    def add_face(i, j, k) -> int:
        nonlocal next_id
        normal, offset = _plane(P, i, j, k)
        face = _Face((i, j, k), normal, offset)
        fid = next_id
        next_id += 1
        faces[fid] = face
        for e in face.edges():
            edge_map[e] = fid
        return fid

    def assign(candidates: np.ndarray, fids: list[int]) -> None:
        if len(candidates) == 0 or not fids:
            return
        normals = np.array([faces[f].normal for f in fids])
        offsets = np.array([faces[f].offset for f in fids])
        dist = P[candidates] @ normals.T - offsets
        best = dist.argmax(axis=1)
        above = dist[np.arange(len(candidates)), best] > eps
        for slot, fid in enumerate(fids):
            sel = above & (best == slot)
            if sel.any():
                faces[fid].outside = candidates[sel]

    initial = [add_face(a, b, c), add_face(a, d, b), add_face(b, d, c), add_face(c, d, a)]
    rest = np.setdiff1d(np.arange(len(P)), [a, b, c, d])
    assign(rest, initial)
    stack = [f for f in initial if len(faces[f].outside)]

    while stack:
        fid = stack.pop()
        face = faces.get(fid)
        if face is None or len(face.outside) == 0:
            continue
        heights = P[face.outside] @ face.normal - face.offset
        apex = int(face.outside[np.argmax(heights)])
        apex_pt = P[apex]

        visible = {fid}
        hidden: set[int] = set()
        queue = [fid]
        while queue:
            g = faces[queue.pop()]
            for i, j in g.edges():
                h = edge_map[(j, i)]
                if h in visible or h in hidden:
                    continue
                if apex_pt @ faces[h].normal - faces[h].offset > eps:
                    visible.add(h)
                    queue.append(h)
                else:
                    hidden.add(h)

        horizon = [e for g in visible for e in faces[g].edges() if edge_map[(e[1], e[0])] not in visible]
        orphans = np.concatenate([faces[g].outside for g in visible])
        orphans = orphans[orphans != apex]
        for g in visible:
            for e in faces[g].edges():
                if edge_map.get(e) == g:
                    del edge_map[e]
            del faces[g]

        new = [add_face(i, j, apex) for i, j in horizon]
        assign(orphans, new)
        stack.extend(f for f in new if len(faces[f].outside))

    face_list = list(faces.values())
    tri = np.array([f.verts for f in face_list], dtype=np.int64)
    used, remap = np.unique(tri, return_inverse=True)
    return ConvexHull3(
        vertices=P[used].copy(),
        vertex_ids=used,
        faces=remap.reshape(tri.shape),
        normals=np.array([f.normal for f in face_list]),
        offsets=np.array([f.offset for f in face_list]),
        eps=eps,
    )


def _segment_distance(Q, A, B):
    # Q: (m, F, 3); A, B: (F, 3)
    ab = B - A
    denom = np.einsum("fi,fi->f", ab, ab)
    t = np.einsum("mfi,fi->mf", Q - A, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    closest = A + t[..., None] * ab
    return np.linalg.norm(Q - closest, axis=2)


def distances_to_hull(hull: ConvexHull3, points, chunk: int = 1 << 21) -> np.ndarray:
    """Euclidean distance from each point to the hull (0 inside or on it).

    Outside points get the distance to the nearest facet, edge or vertex,
    not the plane excess, which overestimates near edges and corners.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(len(points))
    outside = np.nonzero(~hull.contains(points))[0]
    if len(outside) == 0:
        return out
    tri = hull.vertices[hull.faces]
    A, B, C = tri[:, 0], tri[:, 1], tri[:, 2]
    n = hull.normals
    rows = max(1, chunk // len(tri))
    for start in range(0, len(outside), rows):
        idx = outside[start:start + rows]
        Q = points[idx][:, None, :].repeat(len(tri), axis=1)
        plane = points[idx] @ n.T - hull.offsets
        proj = Q - plane[..., None] * n
        inside = np.ones(plane.shape, dtype=bool)
        for P0, P1 in ((A, B), (B, C), (C, A)):
            inside &= np.einsum("mfi,fi->mf", np.cross(P1 - P0, proj - P0), n) >= 0
        edge = np.minimum(np.minimum(_segment_distance(Q, A, B), _segment_distance(Q, B, C)),
                          _segment_distance(Q, C, A))
        out[idx] = np.where(inside, np.abs(plane), edge).min(axis=1)
    return out


def distance_to_hull(hull: ConvexHull3, p) -> float:
    return float(distances_to_hull(hull, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


class TrustedCore(NamedTuple):
    indices: np.ndarray
    degraded: bool


def select_trusted_core(positions, track_lengths, errors, min_track: int = DEFAULT_MIN_TRACK,
                        max_error_quantile: float = DEFAULT_ERROR_QUANTILE) -> TrustedCore:
    """Indices of points with enough observations and a low reprojection error.

    Falls back to every point (``degraded=True``) when the qualifying set
    has fewer than 4 points or is coplanar.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    track_lengths = np.asarray(track_lengths)
    errors = np.asarray(errors, dtype=np.float64)
    if len(positions) == 0:
        raise ValueError("cannot select a core from an empty point set")
    if not 0 < max_error_quantile <= 1:
        raise ValueError(f"max_error_quantile must be in (0, 1], got {max_error_quantile}")
    cutoff = np.quantile(errors, max_error_quantile)
    core = np.nonzero((track_lengths >= min_track) & (errors <= cutoff))[0]
    eps = EPS_SCALE * bbox_diagonal(positions)
    if len(core) < 4 or affine_rank(positions[core], eps) < 3:
        logger.warning("trusted core has %d usable points; falling back to all %d points",
                       len(core), len(positions))
        return TrustedCore(np.arange(len(positions)), True)
    return TrustedCore(core, False)


@dataclass(frozen=True, eq=False)
class FilterResult:
    kept: np.ndarray
    removed: np.ndarray
    threshold_used: float
    core_size: int
    degraded: bool
    distances: np.ndarray

    def format(self, include_removed_ids: bool = True) -> str:
        lines = [
            "# hull filter report",
            f"points_in {len(self.kept) + len(self.removed)}",
            f"kept {len(self.kept)}",
            f"removed {len(self.removed)}",
            f"core_size {self.core_size}",
            f"degraded {str(self.degraded).lower()}",
            f"threshold_used {self.threshold_used!r}",
        ]
        if include_removed_ids:
            lines.append("removed_ids " + " ".join(str(int(i)) for i in self.removed))
        return "\n".join(lines) + "\n"


def filter_outliers(ids, positions, track_lengths, errors, rel_threshold: float = DEFAULT_REL_THRESHOLD,
                    min_track: int = DEFAULT_MIN_TRACK,
                    max_error_quantile: float = DEFAULT_ERROR_QUANTILE) -> FilterResult:
    """Remove points farther than ``rel_threshold * diagonal`` from the core hull."""
    if not rel_threshold >= 0:
        raise ValueError(f"rel_threshold must be >= 0, got {rel_threshold}")
    ids = np.asarray(ids, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    core = select_trusted_core(positions, track_lengths, errors, min_track, max_error_quantile)
    hull = build_hull(positions[core.indices])
    threshold = rel_threshold * hull.diagonal if np.isfinite(rel_threshold) else np.inf
    dist = distances_to_hull(hull, positions)
    removed = dist > threshold
    return FilterResult(ids[~removed], ids[removed], float(threshold), len(core.indices), core.degraded, dist)


def filter_model(model, **params) -> FilterResult:
    ids, xyz, _, errors, tracks = model.point_arrays()
    return filter_outliers(ids, xyz, tracks, errors, **params)

"""Camera clustering and representative view selection.

Camera centers are z-scored per axis and clustered with k-means for
every candidate k. Each k is scored as ``alpha * coverage + beta *
compactness``; the best clustering then contributes one representative
view per cluster.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

K_MIN = 3
K_MAX = 15
ALPHA = 0.5
BETA = 0.5
MAX_ITER = 200
SHIFT_TOL = 1e-8
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class CameraFeature:
    view_name: str
    center: np.ndarray
    forward: np.ndarray
    normalized_center: np.ndarray


@dataclass(frozen=True, eq=False)
class Clustering:
    k: int
    assignment: np.ndarray   # (N,) cluster index per view
    centroids: np.ndarray    # (k, 3) in normalized coordinates
    inertia: float
    history: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class SelectionResult:
    chosen_k: int
    score_per_k: dict[int, float]
    representatives: tuple[str, ...] = ()
    clustering: Clustering | None = None
    candidates: tuple[int, ...] = field(default_factory=tuple)

    def format(self) -> str:
        lines = ["# view selection report", f"chosen_k {self.chosen_k}", "# k score"]
        lines += [f"score {k} {s!r}" for k, s in sorted(self.score_per_k.items())]
        lines.append("# cluster representative")
        lines += [f"representative {i} {name}" for i, name in enumerate(self.representatives)]
        return "\n".join(lines) + "\n"


def parse_selection(text: str) -> SelectionResult:
    chosen_k, scores, reps = 0, {}, []
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "chosen_k":
            chosen_k = int(rest)
        elif key == "score":
            k, s = rest.split()
            scores[int(k)] = float(s)
        elif key == "representative":
            reps.append(rest.split(" ", 1)[1])
    return SelectionResult(chosen_k, scores, tuple(reps))


def zscore(centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = centers.mean(axis=0)
    sigma = np.maximum(centers.std(axis=0), SIGMA_FLOOR)
    return (centers - mu) / sigma, mu, sigma


def extract_features(model, forward_convention: str = "neg-z", views=None) -> list[CameraFeature]:
    """Camera centers, viewing axes and z-scored centers for each view.

    ``forward_convention`` picks the c2w column used as the viewing axis:
    ``"neg-z"`` (OpenGL style) or ``"pos-z"`` (COLMAP/OpenCV style).
    Views are ordered by name unless ``views`` gives an explicit order.
    """
    if forward_convention not in ("neg-z", "pos-z"):
        raise ValueError(f"unknown forward convention {forward_convention!r}")
    images = sorted(model.images.values(), key=lambda im: im.name)
    if views is not None:
        by_name = {im.name: im for im in images}
        images = [by_name[v] for v in views]
    if not images:
        raise ValueError("no registered views")
    sign = -1.0 if forward_convention == "neg-z" else 1.0
    centers = np.array([im.center for im in images])
    forwards = np.array([sign * im.c2w[:3, 2] for im in images])
    forwards /= np.linalg.norm(forwards, axis=1, keepdims=True)
    normalized, _, _ = zscore(centers)
    return [CameraFeature(im.name, c, f, z) for im, c, f, z in zip(images, centers, forwards, normalized)]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with a chosen centroid
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _repair_empty(X, labels, centroids, k):
    """Move the farthest point of the largest cluster into each empty cluster."""
    while True:
        counts = np.bincount(labels, minlength=k)
        empty = np.nonzero(counts == 0)[0]
        if len(empty) == 0:
            return labels
        donor = int(np.argmax(counts))
        members = np.nonzero(labels == donor)[0]
        far = members[np.argmax(((X[members] - centroids[donor]) ** 2).sum(axis=1))]
        labels[far] = empty[0]
        centroids[empty[0]] = X[far]


def kmeans(X, k: int, seed: int = 0, max_iter: int = MAX_ITER, tol: float = SHIFT_TOL) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding.

    ``history`` records the inertia after every centroid update and is
    non-increasing.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(X, k, rng)
    history = []
    for _ in range(max_iter):
        labels = _repair_empty(X, _sq_dists(X, centroids).argmin(axis=1), centroids, k)
        updated = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        history.append(float(((X - centroids[labels]) ** 2).sum()))
        if shift < tol:
            break
    labels = _repair_empty(X, _sq_dists(X, centroids).argmin(axis=1), centroids, k)
    inertia = float(((X - centroids[labels]) ** 2).sum())
    return Clustering(k, labels, centroids, inertia, tuple(history))


def _mean_pairwise_angle(forwards: np.ndarray) -> float:
    cos = np.clip(forwards @ forwards.T, -1.0, 1.0)
    iu = np.triu_indices(len(forwards), 1)
    return float(np.arccos(cos[iu]).mean())


def coverage(clustering: Clustering, features: list[CameraFeature]) -> float:
    """Mean over clusters of (spatial spread + angular diversity) / 2.

    Spread is the mean pairwise center distance over the scene's camera
    bounding-box diagonal, angular diversity the mean pairwise angle
    between viewing axes over pi. Singleton clusters count as 0.
    """
    centers = np.array([f.center for f in features])
    forwards = np.array([f.forward for f in features])
    diag = max(float(np.linalg.norm(centers.max(axis=0) - centers.min(axis=0))), SIGMA_FLOOR)
    values = []
    for j in range(clustering.k):
        members = np.nonzero(clustering.assignment == j)[0]
        if len(members) < 2:
            values.append(0.0)
            continue
        c = centers[members]
        iu = np.triu_indices(len(members), 1)
        spread = float(np.linalg.norm(c[:, None] - c[None], axis=2)[iu].mean()) / diag
        angular = _mean_pairwise_angle(forwards[members]) / np.pi
        values.append((spread + angular) / 2)
    return float(np.mean(values))


def compactness(clustering: Clustering, features: list[CameraFeature]) -> float:
    X = np.array([f.normalized_center for f in features])
    return -clustering.inertia / max(float(np.linalg.norm(X)), SIGMA_FLOOR)


def candidate_range(n: int, k_min: int = K_MIN) -> range:
    return range(k_min, min(K_MAX, n // 2) + 1)


@dataclass(frozen=True, eq=False)
class KSelection:
    chosen_k: int
    score_per_k: dict[int, float]
    clusterings: dict[int, Clustering]


def select_k(features: list[CameraFeature], k_min: int = K_MIN, alpha: float = ALPHA, beta: float = BETA,
             seed: int = 0, threads: int = 1) -> KSelection:
    """Score every candidate k and return the argmax (ties go to the smaller k)."""
    n = len(features)
    if n < 2:
        raise ValueError(f"need at least 2 views, got {n}")
    X = np.array([f.normalized_center for f in features])
    ks = list(candidate_range(n, k_min))

    def evaluate(k):
        cl = kmeans(X, k, seed)
        return k, cl, alpha * coverage(cl, features) + beta * compactness(cl, features)

    if threads > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, ks))
    else:
        results = [evaluate(k) for k in ks]

    scores = {k: s for k, _, s in results}
    clusterings = {k: cl for k, cl, _ in results}
    if not ks:
        chosen = max(1, n // 2)
        logger.info("candidate range empty for %d views; using k=%d", n, chosen)
        clusterings[chosen] = kmeans(X, chosen, seed)
    else:
        chosen = min(ks, key=lambda k: (-scores[k], k))
    return KSelection(chosen, scores, clusterings)


def select_representatives(clustering: Clustering, features: list[CameraFeature]) -> list[str]:
    """Pick one view per cluster, in cluster-index order.

    Score = (1 / (1 + distance to the de-normalized centroid) + scaled
    mean angular separation) / 2, where the angular term is min-max
    scaled within the cluster. Ties go to the lexicographically smallest
    view name.
    """
    centers = np.array([f.center for f in features])
    forwards = np.array([f.forward for f in features])
    _, mu, sigma = zscore(centers)
    world_centroids = clustering.centroids * sigma + mu
    reps = []
    for j in range(clustering.k):
        members = np.nonzero(clustering.assignment == j)[0]
        proximity = 1.0 / (1.0 + np.linalg.norm(centers[members] - world_centroids[j], axis=1))
        if len(members) > 1:
            f = forwards[members]
            angles = np.arccos(np.clip(f @ f.T, -1.0, 1.0))
            separation = angles.sum(axis=1) / (len(members) - 1)
            lo, hi = separation.min(), separation.max()
            uniqueness = (separation - lo) / (hi - lo) if hi > lo else np.zeros(len(members))
        else:
            uniqueness = np.zeros(1)
        score = (proximity + uniqueness) / 2
        best = min(range(len(members)), key=lambda i: (-score[i], features[members[i]].view_name))
        reps.append(features[members[best]].view_name)
    return reps


def select_views(features: list[CameraFeature], k_min: int = K_MIN, alpha: float = ALPHA, beta: float = BETA,
                 seed: int = 0, threads: int = 1) -> SelectionResult:
    ks = select_k(features, k_min, alpha, beta, seed, threads)
    clustering = ks.clusterings[ks.chosen_k]
    reps = select_representatives(clustering, features)
    return SelectionResult(ks.chosen_k, ks.score_per_k, tuple(reps), clustering,
                           tuple(sorted(ks.score_per_k)))

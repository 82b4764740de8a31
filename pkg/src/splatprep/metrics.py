"""Training objectives and evaluation metrics.

Images are float arrays in [0, 1] shaped (H, W) or (H, W, C). Embeddings
are 1-D vectors. PSNR of identical images is ``inf`` (written as the
token ``inf`` in reports).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image
from scipy.signal import convolve2d
from scipy.spatial import cKDTree

from splatprep.errors import DataError, DimensionMismatchError

LAMBDA_DINO = 0.05
LAMBDA_DSSIM = 0.2
DINO_SIGNS = ("dissimilarity", "paper_literal")
NORM_FLOOR = 1e-12

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    lambda_dino: float = LAMBDA_DINO
    lambda_dssim: float = LAMBDA_DSSIM
    dino_sign: str = "dissimilarity"

    def __post_init__(self):
        if not 0 <= self.lambda_dssim <= 1:
            raise ValueError(f"lambda_dssim must be in [0, 1], got {self.lambda_dssim}")
        if not self.lambda_dino >= 0:
            raise ValueError(f"lambda_dino must be >= 0, got {self.lambda_dino}")
        if self.dino_sign not in DINO_SIGNS:
            raise ValueError(f"dino_sign must be one of {DINO_SIGNS}")


def _vector(f) -> np.ndarray:
    values = getattr(f, "values", f)
    return np.asarray(values, dtype=np.float64).ravel()


def cosine(f_gt, f_r) -> float:
    a, b = _vector(f_gt), _vector(f_r)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"embedding dims differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= NORM_FLOOR or nb <= NORM_FLOOR:
        raise ValueError("cosine similarity is undefined for a zero-norm embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def dino_loss(f_gt, f_r, weights: LossWeights = LossWeights()) -> float:
    """Weighted semantic term.

    ``paper_literal`` returns ``lambda * cos``; ``dissimilarity`` returns
    ``lambda * (1 - cos)``, which is zero for identical embeddings.
    """
    c = cosine(f_gt, f_r)
    if weights.dino_sign == "paper_literal":
        return weights.lambda_dino * c
    return weights.lambda_dino * (1.0 - c)


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise DimensionMismatchError(f"expected (H, W) or (H, W, C) images, got {a.shape}")
    for img in (a, b):
        if not np.all(np.isfinite(img)) or img.min(initial=0) < 0 or img.max(initial=0) > 1:
            raise DataError("image values must be finite and within [0, 1]")
    return a, b


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> np.ndarray:
    def filt(img):
        return convolve2d(img, window, mode="valid")

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    return ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))


def ssim(a, b) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid region only."""
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DimensionMismatchError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    window = gaussian_window()
    maps = [_ssim_channel(a[..., c], b[..., c], window) for c in range(a.shape[2])]
    return float(np.mean([m.mean() for m in maps]))


def l1(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.abs(a - b).mean())


def l_photo(gt, r, weights: LossWeights = LossWeights()) -> float:
    lam = weights.lambda_dssim
    return (1 - lam) * l1(gt, r) + lam * (1 - ssim(gt, r))


def l_total(gt, r, f_gt, f_r, weights: LossWeights = LossWeights()) -> float:
    return l_photo(gt, r, weights) + dino_loss(f_gt, f_r, weights)


def psnr(gt, r) -> float:
    a, b = _check_pair(gt, r)
    mse = float(((a - b) ** 2).mean())
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


class PointSetDistance(NamedTuple):
    mean_d2s: float
    mean_s2d: float
    overall: float


def point_set_distance(d, s) -> PointSetDistance:
    """Mean nearest-neighbor distances between two point sets, both ways.

    Point-to-point, not point-to-mesh.
    """
    d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
    s = np.asarray(s, dtype=np.float64).reshape(-1, 3)
    if len(d) == 0 or len(s) == 0:
        raise ValueError("point sets must be non-empty")
    d2s = float(cKDTree(s).query(d)[0].mean())
    s2d = float(cKDTree(d).query(s)[0].mean())
    return PointSetDistance(d2s, s2d, overall_error(d2s, s2d))


def overall_error(mean_d2s: float, mean_s2d: float) -> float:
    return (mean_d2s + mean_s2d) / 2


def load_image(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG (gray or RGB) into [0, 1] floats."""
    with Image.open(path) as img:
        if img.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.array(img).astype(np.float64) / 65535.0
        elif img.mode in ("L", "RGB"):
            arr = np.array(img).astype(np.float64) / 255.0
        elif img.mode == "RGBA":
            arr = np.array(img.convert("RGB")).astype(np.float64) / 255.0
        else:
            raise DataError(f"{Path(path).name}: unsupported image mode {img.mode}")
    return arr


def format_value(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


@dataclass
class MetricReport:
    """Named scalar metrics keyed by (scene, view)."""

    rows: dict[tuple[str, str], dict[str, float]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def add(self, scene: str, view: str, **values: float) -> None:
        self.rows.setdefault((scene, view), {}).update(values)

    def format_table(self) -> str:
        names = sorted({k for row in self.rows.values() for k in row})
        header = ["scene", "view", *names]
        body = [[scene, view, *(format_value(row[n]) if n in row else "-" for n in names)]
                for (scene, view), row in sorted(self.rows.items())]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        lines = [f"# {note}" for note in self.notes]
        for r in [header, *body]:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def format_records(self) -> str:
        lines = []
        for (scene, view), row in sorted(self.rows.items()):
            for name in sorted(row):
                lines.append(f"{scene}/{view}/{name}={format_value(row[name])}")
        return "\n".join(lines) + "\n"

"""Per-view segment label rasters with area/bbox sidecars.

A mask is a 16-bit grayscale PNG (0 = unlabeled, k > 0 = segment k).
The optional sidecar ``<stem>.segments.txt`` holds one record per label::

    # LABEL AREA X Y W H
    1 8 0 0 2 4

Areas and boxes are always recounted from the raster; sidecar values
that disagree are replaced and a :class:`MaskConsistencyWarning` is
issued.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from splatprep.errors import FormatError

logger = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".segments.txt"


class MaskConsistencyWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class SegmentMask:
    view_name: str
    labels: np.ndarray
    areas: dict[int, int]
    # label -> (x, y, w, h) in pixels
    bboxes: dict[int, tuple[int, int, int, int]]

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @classmethod
    def from_labels(cls, view_name: str, labels) -> "SegmentMask":
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise FormatError(f"label raster must be 2-D, got shape {labels.shape}", source=view_name)
        labels = labels.astype(np.uint16)
        areas, bboxes = segment_stats(labels)
        return cls(view_name, labels, areas, bboxes)


def segment_stats(labels: np.ndarray) -> tuple[dict[int, int], dict[int, tuple[int, int, int, int]]]:
    counts = np.bincount(labels.ravel().astype(np.int64))
    areas, bboxes = {}, {}
    for label in np.nonzero(counts)[0]:
        if label == 0:
            continue
        rows, cols = np.nonzero(labels == label)
        x0, y0 = int(cols.min()), int(rows.min())
        areas[int(label)] = int(counts[label])
        bboxes[int(label)] = (x0, y0, int(cols.max()) - x0 + 1, int(rows.max()) - y0 + 1)
    return areas, bboxes


def sidecar_path(raster_path) -> Path:
    raster_path = Path(raster_path)
    return raster_path.with_name(raster_path.stem + SIDECAR_SUFFIX)


def read_sidecar(path) -> dict[int, tuple[int, tuple[int, int, int, int]]]:
    path = Path(path)
    records = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise FormatError("expected LABEL AREA X Y W H", source=path.name, line=lineno)
        try:
            label, area, x, y, w, h = map(int, parts)
        except ValueError:
            raise FormatError(f"non-integer field in {line!r}", source=path.name, line=lineno) from None
        records[label] = (area, (x, y, w, h))
    return records


def _read_raster(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        raster = np.load(path)
    else:
        with Image.open(path) as img:
            raster = np.array(img)
    if raster.ndim != 2:
        raise FormatError(f"label raster must be single-channel, got shape {raster.shape}", source=path.name)
    if raster.min(initial=0) < 0 or raster.max(initial=0) > 65535:
        raise FormatError("label values outside the 16-bit range", source=path.name)
    return raster.astype(np.uint16)


def _bbox_contains(outer, inner) -> bool:
    ox, oy, ow, oh = outer
    ix, iy, iw, ih = inner
    return ox <= ix and oy <= iy and ox + ow >= ix + iw and oy + oh >= iy + ih


def load_mask(path, *, view_name: str | None = None,
              expected_size: tuple[int, int] | None = None) -> SegmentMask:
    """Load a label raster and reconcile it with its sidecar, if any.

    ``expected_size`` is ``(width, height)`` of the view's camera; a
    mismatch is logged but not fatal, since fusion re-checks it.
    """
    path = Path(path)
    raster = _read_raster(path)
    mask = SegmentMask.from_labels(view_name or path.stem, raster)

    side = sidecar_path(path)
    if side.is_file():
        declared = read_sidecar(side)
        for label, (area, bbox) in declared.items():
            if label not in mask.areas:
                warnings.warn(f"{side.name}: label {label} declared but absent from raster",
                              MaskConsistencyWarning, stacklevel=2)
                continue
            if area != mask.areas[label]:
                warnings.warn(f"{side.name}: label {label} declares area {area}, raster has "
                              f"{mask.areas[label]}; using the recount", MaskConsistencyWarning, stacklevel=2)
            if not _bbox_contains(bbox, mask.bboxes[label]):
                warnings.warn(f"{side.name}: label {label} bbox {bbox} does not contain all its cells; "
                              "using the recomputed box", MaskConsistencyWarning, stacklevel=2)

    if expected_size is not None and (mask.width, mask.height) != tuple(expected_size):
        logger.warning("mask %s is %dx%d but its camera is %dx%d", path.name, mask.width, mask.height,
                       *expected_size)
    return mask


def write_mask(mask: SegmentMask, path) -> None:
    """Write the raster as 16-bit PNG plus its sidecar."""
    path = Path(path)
    Image.fromarray(mask.labels.astype(np.uint16)).save(path)
    lines = ["# LABEL AREA X Y W H"]
    for label in sorted(mask.areas):
        x, y, w, h = mask.bboxes[label]
        lines.append(f"{label} {mask.areas[label]} {x} {y} {w} {h}")
    sidecar_path(path).write_text("\n".join(lines) + "\n")

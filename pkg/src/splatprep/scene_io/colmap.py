"""Read and write COLMAP sparse models (binary and text variants).

Only SIMPLE_PINHOLE and PINHOLE cameras are accepted. Every error names
the stream and the byte offset (binary) or line number (text).
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from splatprep.errors import FormatError
from splatprep.scene_io.model import (
    CAMERA_MODEL_IDS,
    CAMERA_MODELS,
    DISTORTED_MODELS,
    CameraIntrinsics,
    CameraPose,
    SceneModel,
    ScenePoint,
    normalize_qvec,
)

BINARY_NAMES = ("cameras.bin", "images.bin", "points3D.bin")
TEXT_NAMES = ("cameras.txt", "images.txt", "points3D.txt")


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = memoryview(data)
        self.pos = 0
        self.source = source

    def unpack(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        if self.pos + size > len(self.data):
            raise FormatError(
                f"truncated stream: need {size} bytes, {len(self.data) - self.pos} left",
                source=self.source, offset=self.pos)
        values = struct.unpack_from("<" + fmt, self.data, self.pos)
        self.pos += size
        return values

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        size = dt.itemsize * count
        if self.pos + size > len(self.data):
            raise FormatError(
                f"truncated stream: need {size} bytes, {len(self.data) - self.pos} left",
                source=self.source, offset=self.pos)
        out = np.frombuffer(self.data, dtype=dt, count=count, offset=self.pos).copy()
        self.pos += size
        return out

    def cstring(self) -> str:
        end = bytes(self.data[self.pos:]).find(b"\x00")
        if end < 0:
            raise FormatError("unterminated image name", source=self.source, offset=self.pos)
        raw = bytes(self.data[self.pos:self.pos + end])
        self.pos += end + 1
        return raw.decode("utf-8")

    def expect_end(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes after last record",
                              source=self.source, offset=self.pos)


def _camera_model(model_id: int, *, source: str, offset=None, line=None) -> tuple[str, int]:
    if model_id in CAMERA_MODELS:
        return CAMERA_MODELS[model_id]
    if model_id in DISTORTED_MODELS:
        raise FormatError(f"camera model {DISTORTED_MODELS[model_id]} has distortion terms; "
                          "only SIMPLE_PINHOLE and PINHOLE are supported",
                          source=source, offset=offset, line=line)
    raise FormatError(f"unknown camera model code {model_id}", source=source, offset=offset, line=line)


def _check_intrinsics(cam: CameraIntrinsics, **where):
    if cam.width <= 0 or cam.height <= 0:
        raise FormatError(f"camera {cam.camera_id} has non-positive size {cam.width}x{cam.height}", **where)
    if not (cam.fx > 0 and cam.fy > 0):
        raise FormatError(f"camera {cam.camera_id} has non-positive focal length", **where)


# -- binary -----------------------------------------------------------------

def _parse_cameras_bin(data: bytes) -> dict[int, CameraIntrinsics]:
    r = _Reader(data, "cameras.bin")
    (count,) = r.unpack("Q")
    cameras = {}
    for _ in range(count):
        start = r.pos
        camera_id, model_id, width, height = r.unpack("iiQQ")
        name, n_params = _camera_model(model_id, source=r.source, offset=start + 4)
        params = r.unpack("d" * n_params)
        cam = CameraIntrinsics.from_params(camera_id, name, width, height, params)
        _check_intrinsics(cam, source=r.source, offset=start)
        cameras[camera_id] = cam
    r.expect_end()
    return cameras


def _parse_images_bin(data: bytes, cameras) -> tuple[dict[int, CameraPose], dict[int, int]]:
    r = _Reader(data, "images.bin")
    (count,) = r.unpack("Q")
    images, offsets = {}, {}
    for _ in range(count):
        start = r.pos
        image_id, qw, qx, qy, qz, tx, ty, tz, camera_id = r.unpack("idddddddi")
        if camera_id not in cameras:
            raise FormatError(f"image {image_id} references missing camera {camera_id}",
                              source=r.source, offset=start + 60)
        qvec = normalize_qvec((qw, qx, qy, qz), source=r.source, offset=start + 4)
        name = r.cstring()
        (n_pts,) = r.unpack("Q")
        rec = r.array([("x", "<f8"), ("y", "<f8"), ("id", "<i8")], n_pts)
        xys = np.stack([rec["x"], rec["y"]], axis=1) if n_pts else np.zeros((0, 2))
        images[image_id] = CameraPose(image_id, name, qvec, np.array([tx, ty, tz]), camera_id,
                                      xys, rec["id"].astype(np.int64))
        offsets[image_id] = start
    r.expect_end()
    return images, offsets


def _parse_points_bin(data: bytes, images) -> dict[int, ScenePoint]:
    r = _Reader(data, "points3D.bin")
    (count,) = r.unpack("Q")
    points = {}
    for _ in range(count):
        start = r.pos
        point_id, x, y, z, cr, cg, cb, error, track_len = r.unpack("QdddBBBdQ")
        track = r.array([("image", "<i4"), ("idx", "<i4")], track_len)
        track = np.stack([track["image"], track["idx"]], axis=1).astype(np.int64) if track_len \
            else np.zeros((0, 2), dtype=np.int64)
        _check_track(point_id, track, images, source=r.source, offset=start)
        points[point_id] = ScenePoint(point_id, np.array([x, y, z]), np.array([cr, cg, cb], dtype=np.uint8),
                                      error, track)
    r.expect_end()
    return points


def _check_track(point_id, track, images, **where):
    for image_id in track[:, 0]:
        if int(image_id) not in images:
            raise FormatError(f"point {point_id} track references missing image {int(image_id)}", **where)


# -- text -------------------------------------------------------------------

_DECLARED = re.compile(r"#\s*Number of (cameras|images|points):\s*(\d+)")


def _declared_count(lines: list[str], what: str) -> int | None:
    for line in lines:
        if not line.startswith("#"):
            break
        m = _DECLARED.match(line)
        if m and m.group(1) == what:
            return int(m.group(2))
    return None


def _fields(line: str, source: str, lineno: int, minimum: int) -> list[str]:
    parts = line.split()
    if len(parts) < minimum:
        raise FormatError(f"expected at least {minimum} fields, got {len(parts)}", source=source, line=lineno)
    return parts


def _num(value: str, cast, source: str, lineno: int):
    try:
        return cast(value)
    except ValueError:
        raise FormatError(f"cannot parse {value!r} as {cast.__name__}", source=source, line=lineno) from None


def _parse_cameras_txt(text: str) -> dict[int, CameraIntrinsics]:
    source = "cameras.txt"
    lines = text.splitlines()
    cameras = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = _fields(line, source, lineno, 4)
        camera_id = _num(parts[0], int, source, lineno)
        if parts[1] not in CAMERA_MODEL_IDS:
            code = {v: k for k, v in DISTORTED_MODELS.items()}.get(parts[1], -1)
            if code < 0:
                raise FormatError(f"unknown camera model {parts[1]!r}", source=source, line=lineno)
            _camera_model(code, source=source, line=lineno)
        model_id = CAMERA_MODEL_IDS[parts[1]]
        n_params = CAMERA_MODELS[model_id][1]
        if len(parts) != 4 + n_params:
            raise FormatError(f"{parts[1]} expects {n_params} parameters, got {len(parts) - 4}",
                              source=source, line=lineno)
        params = [_num(p, float, source, lineno) for p in parts[4:]]
        cam = CameraIntrinsics.from_params(camera_id, parts[1], _num(parts[2], int, source, lineno),
                                           _num(parts[3], int, source, lineno), params)
        _check_intrinsics(cam, source=source, line=lineno)
        cameras[camera_id] = cam
    _check_declared(lines, "cameras", len(cameras), source)
    return cameras


def _check_declared(lines, what, actual, source):
    declared = _declared_count(lines, what)
    if declared is not None and declared != actual:
        raise FormatError(f"header declares {declared} {what}, found {actual}", source=source, line=1)


def _parse_images_txt(text: str, cameras) -> dict[int, CameraPose]:
    source = "images.txt"
    lines = text.splitlines()
    images = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        lineno = i + 1
        i += 1
        if not line or line.startswith("#"):
            continue
        parts = _fields(line, source, lineno, 10)
        image_id = _num(parts[0], int, source, lineno)
        q = [_num(v, float, source, lineno) for v in parts[1:5]]
        t = [_num(v, float, source, lineno) for v in parts[5:8]]
        camera_id = _num(parts[8], int, source, lineno)
        if camera_id not in cameras:
            raise FormatError(f"image {image_id} references missing camera {camera_id}", source=source, line=lineno)
        name = " ".join(parts[9:])
        qvec = normalize_qvec(q, source=source, line=lineno)
        # the observation line always follows, possibly empty
        obs = lines[i].split() if i < len(lines) else []
        i += 1
        if len(obs) % 3:
            raise FormatError("observation line must hold X Y POINT3D_ID triples", source=source, line=lineno + 1)
        xys = np.array([[_num(obs[j], float, source, lineno + 1), _num(obs[j + 1], float, source, lineno + 1)]
                        for j in range(0, len(obs), 3)], dtype=np.float64).reshape(-1, 2)
        ids = np.array([_num(obs[j + 2], int, source, lineno + 1) for j in range(0, len(obs), 3)], dtype=np.int64)
        images[image_id] = CameraPose(image_id, name, qvec, np.array(t), camera_id, xys, ids)
    _check_declared(lines, "images", len(images), source)
    return images


def _parse_points_txt(text: str, images) -> dict[int, ScenePoint]:
    source = "points3D.txt"
    lines = text.splitlines()
    points = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = _fields(line, source, lineno, 8)
        point_id = _num(parts[0], int, source, lineno)
        xyz = np.array([_num(v, float, source, lineno) for v in parts[1:4]])
        rgb = [_num(v, int, source, lineno) for v in parts[4:7]]
        if any(c < 0 or c > 255 for c in rgb):
            raise FormatError(f"point {point_id} color out of range", source=source, line=lineno)
        error = _num(parts[7], float, source, lineno)
        rest = parts[8:]
        if len(rest) % 2:
            raise FormatError("track must hold IMAGE_ID POINT2D_IDX pairs", source=source, line=lineno)
        track = np.array([_num(v, int, source, lineno) for v in rest], dtype=np.int64).reshape(-1, 2)
        _check_track(point_id, track, images, source=source, line=lineno)
        points[point_id] = ScenePoint(point_id, xyz, np.array(rgb, dtype=np.uint8), error, track)
    _check_declared(lines, "points", len(points), source)
    return points


# -- public API -------------------------------------------------------------

def parse_colmap_model(camera_bytes: bytes, image_bytes: bytes, point_bytes: bytes,
                       format: str = "binary") -> SceneModel:
    """Parse the three streams of a COLMAP sparse model.

    ``format`` is ``"binary"`` or ``"text"``. Raises :class:`FormatError`
    on truncation, unsupported camera models, or dangling references.
    """
    if format == "binary":
        cameras = _parse_cameras_bin(camera_bytes)
        images, _ = _parse_images_bin(image_bytes, cameras)
        points = _parse_points_bin(point_bytes, images)
    elif format == "text":
        decode = lambda b: b.decode("utf-8") if isinstance(b, (bytes, bytearray)) else b  # noqa: E731
        cameras = _parse_cameras_txt(decode(camera_bytes))
        images = _parse_images_txt(decode(image_bytes), cameras)
        points = _parse_points_txt(decode(point_bytes), images)
    else:
        raise ValueError(f"unknown format {format!r}")
    return SceneModel(cameras, images, points)


def encode_binary(model: SceneModel) -> tuple[bytes, bytes, bytes]:
    cams = [struct.pack("<Q", len(model.cameras))]
    for cam in sorted(model.cameras.values(), key=lambda c: c.camera_id):
        params = cam.params
        cams.append(struct.pack("<iiQQ", cam.camera_id, CAMERA_MODEL_IDS[cam.model], cam.width, cam.height))
        cams.append(struct.pack("<" + "d" * len(params), *params))

    imgs = [struct.pack("<Q", len(model.images))]
    for img in sorted(model.images.values(), key=lambda i: i.image_id):
        imgs.append(struct.pack("<idddddddi", img.image_id, *img.qvec, *img.tvec, img.camera_id))
        imgs.append(img.name.encode("utf-8") + b"\x00")
        imgs.append(struct.pack("<Q", len(img.point3d_ids)))
        rec = np.zeros(len(img.point3d_ids), dtype=[("x", "<f8"), ("y", "<f8"), ("id", "<i8")])
        if len(rec):
            rec["x"], rec["y"], rec["id"] = img.xys[:, 0], img.xys[:, 1], img.point3d_ids
        imgs.append(rec.tobytes())

    pts = [struct.pack("<Q", len(model.points))]
    for p in sorted(model.points.values(), key=lambda p: p.point_id):
        pts.append(struct.pack("<QdddBBBdQ", p.point_id, *p.xyz, *(int(c) for c in p.rgb), p.error, len(p.track)))
        pts.append(np.asarray(p.track, dtype="<i4").tobytes())
    return b"".join(cams), b"".join(imgs), b"".join(pts)


def _fmt(x: float) -> str:
    return repr(float(x))


def encode_text(model: SceneModel) -> tuple[str, str, str]:
    cams = ["# Camera list with one line of data per camera:",
            "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
            f"# Number of cameras: {len(model.cameras)}"]
    for cam in sorted(model.cameras.values(), key=lambda c: c.camera_id):
        cams.append(" ".join([str(cam.camera_id), cam.model, str(cam.width), str(cam.height),
                              *map(_fmt, cam.params)]))

    imgs = ["# Image list with two lines of data per image:",
            "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
            "#   POINTS2D[] as (X, Y, POINT3D_ID)",
            f"# Number of images: {len(model.images)}"]
    for img in sorted(model.images.values(), key=lambda i: i.image_id):
        imgs.append(" ".join([str(img.image_id), *map(_fmt, img.qvec), *map(_fmt, img.tvec),
                              str(img.camera_id), img.name]))
        imgs.append(" ".join(f"{_fmt(x)} {_fmt(y)} {int(pid)}"
                             for (x, y), pid in zip(img.xys, img.point3d_ids)))

    pts = ["# 3D point list with one line of data per point:",
           "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)",
           f"# Number of points: {len(model.points)}"]
    for p in sorted(model.points.values(), key=lambda p: p.point_id):
        pts.append(" ".join([str(p.point_id), *map(_fmt, p.xyz), *(str(int(c)) for c in p.rgb), _fmt(p.error),
                             *(str(int(v)) for v in np.asarray(p.track).ravel())]))
    return tuple("\n".join(block) + "\n" for block in (cams, imgs, pts))


def detect_format(model_dir: Path) -> str:
    model_dir = Path(model_dir)
    if all((model_dir / n).is_file() for n in BINARY_NAMES):
        return "binary"
    if all((model_dir / n).is_file() for n in TEXT_NAMES):
        return "text"
    raise FormatError(f"no complete COLMAP model (binary or text) in {model_dir}")


def read_model(model_dir, format: str | None = None) -> SceneModel:
    model_dir = Path(model_dir)
    format = format or detect_format(model_dir)
    names = BINARY_NAMES if format == "binary" else TEXT_NAMES
    return parse_colmap_model(*((model_dir / n).read_bytes() for n in names), format=format)


def write_model(model: SceneModel, model_dir, format: str = "text") -> None:
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    if format == "binary":
        for name, blob in zip(BINARY_NAMES, encode_binary(model)):
            (model_dir / name).write_bytes(blob)
    else:
        for name, blob in zip(TEXT_NAMES, encode_text(model)):
            (model_dir / name).write_text(blob)

"""In-memory scene representation shared by all stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from splatprep.errors import FormatError

CAMERA_MODELS = {0: ("SIMPLE_PINHOLE", 3), 1: ("PINHOLE", 4)}
CAMERA_MODEL_IDS = {name: model_id for model_id, (name, _) in CAMERA_MODELS.items()}

# Known COLMAP models we refuse because they carry distortion terms.
DISTORTED_MODELS = {
    2: "SIMPLE_RADIAL", 3: "RADIAL", 4: "OPENCV", 5: "OPENCV_FISHEYE",
    6: "FULL_OPENCV", 7: "FOV", 8: "SIMPLE_RADIAL_FISHEYE",
    9: "RADIAL_FISHEYE", 10: "THIN_PRISM_FISHEYE",
}

QUAT_TOLERANCE = 1e-6
# already unit up to rounding; left untouched so text/binary round trips are exact
QUAT_EXACT = 1e-12


def qvec2rotmat(qvec) -> np.ndarray:
    w, x, y, z = qvec
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
        [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
        [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
    ])


def rotmat2qvec(R) -> np.ndarray:
    """Rotation matrix to (w, x, y, z), scalar part non-negative."""
    R = np.asarray(R, dtype=np.float64)
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = R.flat
    K = np.array([
        [Rxx - Ryy - Rzz, 0, 0, 0],
        [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
        [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
        [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
    ]) / 3.0
    eigvals, eigvecs = np.linalg.eigh(K)
    qvec = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if qvec[0] < 0:
        qvec = -qvec
    return qvec / np.linalg.norm(qvec)


def normalize_qvec(qvec, *, source: str | None = None, offset: int | None = None,
                   line: int | None = None) -> np.ndarray:
    """Re-normalize a stored quaternion, rejecting ones far from unit norm."""
    q = np.asarray(qvec, dtype=np.float64)
    norm = float(np.linalg.norm(q))
    if not np.isfinite(norm) or abs(norm - 1.0) > QUAT_TOLERANCE:
        raise FormatError(f"quaternion norm {norm!r} is not within {QUAT_TOLERANCE} of 1",
                          source=source, offset=offset, line=line)
    if abs(norm - 1.0) > QUAT_EXACT:
        q = q / norm
    if q[0] < 0:
        q = -q
    return q


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    camera_id: int
    model: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def params(self) -> tuple[float, ...]:
        if self.model == "SIMPLE_PINHOLE":
            return (self.fx, self.cx, self.cy)
        return (self.fx, self.fy, self.cx, self.cy)

    @classmethod
    def from_params(cls, camera_id: int, model: str, width: int, height: int, params):
        if model == "SIMPLE_PINHOLE":
            f, cx, cy = params
            return cls(camera_id, model, int(width), int(height), float(f), float(f), float(cx), float(cy))
        fx, fy, cx, cy = params
        return cls(camera_id, model, int(width), int(height), float(fx), float(fy), float(cx), float(cy))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """A registered view. ``qvec`` and ``tvec`` map world to camera."""

    image_id: int
    name: str
    qvec: np.ndarray
    tvec: np.ndarray
    camera_id: int
    xys: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    point3d_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def R(self) -> np.ndarray:
        return qvec2rotmat(self.qvec)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.tvec

    @property
    def c2w(self) -> np.ndarray:
        R = self.R
        out = np.eye(4)
        out[:3, :3] = R.T
        out[:3, 3] = -R.T @ self.tvec
        return out


@dataclass(frozen=True, eq=False)
class ScenePoint:
    point_id: int
    xyz: np.ndarray
    rgb: np.ndarray
    error: float = 0.0
    # (image_id, point2d_idx) rows
    track: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @property
    def track_length(self) -> int:
        return int(len(self.track))

    @property
    def image_ids(self) -> np.ndarray:
        return self.track[:, 0] if len(self.track) else np.zeros(0, dtype=np.int64)


@dataclass(eq=False)
class SceneModel:
    cameras: dict[int, CameraIntrinsics]
    images: dict[int, CameraPose]
    points: dict[int, ScenePoint]

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.cameras), len(self.images), len(self.points)

    def image_by_name(self, name: str) -> CameraPose:
        for image in self.images.values():
            if image.name == name:
                return image
        raise KeyError(name)

    def point_arrays(self, ids=None):
        """Return (ids, xyz, rgb, errors, track_lengths) as arrays.

        Order follows ``ids`` when given, else ascending point id.
        """
        if ids is None:
            ids = sorted(self.points)
        pts = [self.points[int(i)] for i in ids]
        n = len(pts)
        xyz = np.array([p.xyz for p in pts], dtype=np.float64).reshape(n, 3)
        rgb = np.array([p.rgb for p in pts], dtype=np.uint8).reshape(n, 3)
        errors = np.array([p.error for p in pts], dtype=np.float64)
        tracks = np.array([p.track_length for p in pts], dtype=np.int64)
        return np.asarray(ids, dtype=np.int64), xyz, rgb, errors, tracks

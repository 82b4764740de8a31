"""Binary little-endian PLY point clouds.

The vertex element always carries float x, y, z and uchar red, green,
blue. Extra scalar properties (point ids, segment labels, provenance
flags) ride along as additional columns.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from splatprep.errors import FormatError
from splatprep.scene_io.model import ScenePoint

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_NUMPY_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
                 "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}
REQUIRED = ("x", "y", "z", "red", "green", "blue")


def write_ply_arrays(path, xyz, rgb, extra: dict[str, np.ndarray] | None = None) -> None:
    """Write positions, colors and optional per-vertex scalar columns."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rgb = np.asarray(rgb).reshape(-1, 3)
    if not np.all(np.isfinite(xyz)):
        raise ValueError("cannot write non-finite positions")
    extra = extra or {}
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
              ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    for name, values in extra.items():
        dt = np.asarray(values).dtype
        code = dt.str.lstrip("<>|=")
        if code not in _NUMPY_TO_PLY:
            raise ValueError(f"unsupported PLY property type {dt} for {name!r}")
        fields.append((name, "<" + code if dt.itemsize > 1 else code))
    data = np.empty(len(xyz), dtype=fields)
    data["x"], data["y"], data["z"] = xyz.T.astype(np.float32)
    data["red"], data["green"], data["blue"] = rgb.T.astype(np.uint8)
    for name, values in extra.items():
        data[name] = values
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(xyz)}"]
    for name, dt in fields:
        header.append(f"property {_NUMPY_TO_PLY[np.dtype(dt).str.lstrip('<>|=')]} {name}")
    header.append("end_header")
    Path(path).write_bytes(("\n".join(header) + "\n").encode("ascii") + data.tobytes())


def read_ply_arrays(path) -> dict[str, np.ndarray]:
    """Read every vertex property into a dict of 1-D arrays."""
    path = Path(path)
    blob = path.read_bytes()
    source = path.name
    marker = b"end_header\n"
    end = blob.find(marker)
    if not blob.startswith(b"ply\n") or end < 0:
        raise FormatError("malformed PLY header", source=source, offset=0)
    lines = blob[:end].decode("ascii", errors="replace").splitlines()
    body_offset = end + len(marker)

    fmt = None
    count = None
    fields = []
    current = None
    trailing = 0
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else None
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise FormatError("malformed element line", source=source, line=lineno)
            current = parts[1]
            n = int(parts[2])
            if current == "vertex":
                count = n
            elif count is None and n > 0:
                raise FormatError(f"element {current!r} before vertex is unsupported", source=source, line=lineno)
            else:
                trailing += n
        elif parts[0] == "property":
            if current != "vertex":
                continue
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise FormatError(f"unsupported property declaration {line!r}", source=source, line=lineno)
            code = _PLY_TYPES[parts[1]]
            fields.append((parts[2], "<" + code if code[-1] != "1" else code))
        else:
            raise FormatError(f"unexpected header keyword {parts[0]!r}", source=source, line=lineno)
    if fmt != "binary_little_endian":
        raise FormatError(f"unsupported PLY format {fmt!r}", source=source, line=2)
    if count is None:
        raise FormatError("no vertex element", source=source, offset=0)
    names = [n for n, _ in fields]
    missing = [n for n in REQUIRED if n not in names]
    if missing:
        raise FormatError(f"missing vertex properties {missing}", source=source, offset=0)
    dtype = np.dtype(fields)
    expected = dtype.itemsize * count
    available = len(blob) - body_offset
    if available < expected:
        raise FormatError(f"vertex count {count} needs {expected} bytes, found {available}",
                          source=source, offset=body_offset)
    if available > expected and not trailing:
        raise FormatError(f"vertex count {count} accounts for {expected} bytes but {available} follow the header",
                          source=source, offset=body_offset + expected)
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=body_offset)
    return {name: data[name].copy() for name in names}


def write_ply(points: list[ScenePoint], path, *, with_ids: bool = False) -> None:
    xyz = np.array([p.xyz for p in points], dtype=np.float64).reshape(-1, 3)
    rgb = np.array([p.rgb for p in points], dtype=np.uint8).reshape(-1, 3)
    extra = {"point_id": np.array([p.point_id for p in points], dtype=np.uint32)} if with_ids else None
    write_ply_arrays(path, xyz, rgb, extra)


def read_ply(path) -> list[ScenePoint]:
    """Read a PLY into ScenePoints; ids come from ``point_id`` if present."""
    cols = read_ply_arrays(path)
    n = len(cols["x"])
    xyz = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    rgb = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1).astype(np.uint8)
    ids = cols["point_id"].astype(np.int64) if "point_id" in cols else np.arange(n)
    return [ScenePoint(int(ids[i]), xyz[i], rgb[i]) for i in range(n)]

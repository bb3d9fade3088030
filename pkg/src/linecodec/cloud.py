"""Point cloud container, voxelization and PLY / XYZ file I/O."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

COORD_MIN = -(2**31)
COORD_MAX = 2**31 - 1


class CloudError(ValueError):
    pass


class EmptyCloud(CloudError):
    pass


class PlyParseError(CloudError):
    pass


class UnsupportedEndianness(PlyParseError):
    pass


def round_half_away(x):
    """Round half away from zero (platform independent, unlike np.round)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Integer voxelized points, shape (n, 3), int32.

    Duplicates are removed on construction unless ``keep_duplicates`` is set.
    Point order is preserved otherwise (first occurrence wins).
    """

    points: np.ndarray
    source_scale: float = 1.0
    keep_duplicates: bool = False
    bbox_min: np.ndarray = field(init=False)
    bbox_max: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise CloudError(f"points must have shape (n, 3), got {pts.shape}")
        if len(pts) == 0:
            raise EmptyCloud("point cloud has no points")
        if not np.issubdtype(pts.dtype, np.integer):
            if not np.all(np.isfinite(pts)) or np.any(pts != np.floor(pts)):
                raise CloudError("point coordinates must be integral voxel indices")
        if pts.min() < COORD_MIN or pts.max() > COORD_MAX:
            raise CloudError("coordinates do not fit in 32 bits")
        pts = pts.astype(np.int32)
        if not self.keep_duplicates:
            _, first = np.unique(pts, axis=0, return_index=True)
            if len(first) != len(pts):
                pts = pts[np.sort(first)]
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bbox_min", pts.min(axis=0))
        object.__setattr__(self, "bbox_max", pts.max(axis=0))

    def __len__(self):
        return len(self.points)

    @property
    def extent(self):
        return (self.bbox_max.astype(np.int64) - self.bbox_min).astype(np.int64)

    def sorted_points(self):
        """Points in lexicographic order; two clouds are equal as multisets
        iff their sorted points are equal."""
        idx = np.lexsort(self.points.T[::-1])
        return self.points[idx]

    def same_points(self, other):
        return len(self) == len(other) and np.array_equal(
            self.sorted_points(), other.sorted_points()
        )


def voxelize(raw_points, scale=1.0, keep_duplicates=False):
    """Map real coordinates to the integer grid by round(coord / scale)."""
    if not scale > 0:
        raise CloudError(f"scale must be positive, got {scale}")
    raw = np.asarray(raw_points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(raw)):
        raise CloudError("NaN or infinite input coordinate")
    q = round_half_away(raw / scale)
    if len(q) and (q.min() < COORD_MIN or q.max() > COORD_MAX):
        raise CloudError("voxelized coordinates do not fit in 32 bits")
    return PointCloud(q.astype(np.int32), source_scale=float(scale),
                      keep_duplicates=keep_duplicates)


# --- PLY -----------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_header(data):
    if not data.startswith(b"ply"):
        raise PlyParseError("missing 'ply' magic at byte 0")
    end = data.find(b"end_header")
    if end < 0:
        raise PlyParseError("header has no end_header line")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyParseError(f"truncated after end_header at byte {end}")
    body_offset = nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []
    for lineno, line in enumerate(lines, start=1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2:
                raise PlyParseError(f"line {lineno}: malformed format line")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyParseError(f"line {lineno}: malformed element line {line!r}")
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise PlyParseError(f"line {lineno}: property before any element")
            if len(tok) == 5 and tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise PlyParseError(f"line {lineno}: unknown list type")
                elements[-1]["props"].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            elif len(tok) == 3:
                if tok[1] not in _PLY_TYPES:
                    raise PlyParseError(f"line {lineno}: unknown property type {tok[1]!r}")
                elements[-1]["props"].append((tok[2], _PLY_TYPES[tok[1]]))
            else:
                raise PlyParseError(f"line {lineno}: malformed property line {line!r}")
        else:
            raise PlyParseError(f"line {lineno}: unexpected keyword {tok[0]!r}")
    if fmt is None:
        raise PlyParseError("header has no format line")
    if fmt == "binary_big_endian":
        raise UnsupportedEndianness("binary_big_endian PLY is not supported")
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyParseError(f"unknown PLY format {fmt!r}")
    return fmt, elements, body_offset


def _vertex_columns(el):
    names = [p[0] for p in el["props"]]
    for axis in "xyz":
        if axis not in names:
            raise PlyParseError(f"vertex element lacks property {axis!r}")
    return [names.index(a) for a in "xyz"]


def _read_ascii(data, elements, body_offset):
    text = data[body_offset:].decode("ascii", errors="replace").splitlines()
    header_lines = data[:body_offset].count(b"\n")
    row = 0
    xyz = None
    for el in elements:
        if el["name"] == "vertex":
            cols = _vertex_columns(el)
            has_list = any(isinstance(p[1], tuple) for p in el["props"])
            out = np.empty((el["count"], 3), dtype=np.float64)
            for i in range(el["count"]):
                if row >= len(text):
                    raise PlyParseError(
                        f"line {header_lines + row + 1}: truncated body, "
                        f"expected {el['count']} vertices, got {i}")
                tok = text[row].split()
                if has_list:
                    raise PlyParseError("list properties on vertex are not supported")
                if len(tok) < len(el["props"]):
                    raise PlyParseError(f"line {header_lines + row + 1}: too few values")
                try:
                    out[i] = [float(tok[c]) for c in cols]
                except ValueError as exc:
                    raise PlyParseError(f"line {header_lines + row + 1}: {exc}") from None
                row += 1
            xyz = out
        else:
            row += el["count"]
    return xyz


def _read_binary(data, elements, body_offset):
    offset = body_offset
    xyz = None
    for el in elements:
        if any(isinstance(p[1], tuple) for p in el["props"]):
            if el["name"] == "vertex" or xyz is None:
                raise PlyParseError(
                    f"byte {offset}: list property in element {el['name']!r} "
                    "before vertex data is not supported")
            break
        dt = np.dtype([(f"p{i}", "<" + p[1]) for i, p in enumerate(el["props"])])
        nbytes = dt.itemsize * el["count"]
        if offset + nbytes > len(data):
            raise PlyParseError(
                f"byte {len(data)}: truncated body in element {el['name']!r}, "
                f"need {nbytes} bytes from offset {offset}")
        if el["name"] == "vertex":
            cols = _vertex_columns(el)
            arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=offset)
            xyz = np.stack([arr[f"p{c}"].astype(np.float64) for c in cols], axis=1)
        offset += nbytes
    return xyz


def read_ply(path, scale=1.0, keep_duplicates=False):
    """Read vertex positions of an ascii or binary little-endian PLY file.

    Non-integral coordinates are voxelized with ``scale``.
    """
    with open(path, "rb") as f:
        data = f.read()
    fmt, elements, body_offset = _parse_header(data)
    if not any(el["name"] == "vertex" for el in elements):
        raise PlyParseError("no vertex element in header")
    if fmt == "ascii":
        xyz = _read_ascii(data, elements, body_offset)
    else:
        xyz = _read_binary(data, elements, body_offset)
    if xyz is None or len(xyz) == 0:
        raise EmptyCloud(f"{path}: vertex element is empty")
    return voxelize(xyz, scale, keep_duplicates=keep_duplicates)


def write_ply(cloud, path, format="binary"):
    pts = np.asarray(cloud.points, dtype=np.int32)
    if len(pts) == 0:
        raise EmptyCloud("refusing to write an empty cloud")
    if format not in ("ascii", "binary"):
        raise ValueError(f"format must be 'ascii' or 'binary', got {format!r}")
    fmt = "ascii" if format == "ascii" else "binary_little_endian"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {len(pts)}\n"
        "property int x\nproperty int y\nproperty int z\n"
        "end_header\n"
    )
    buf = io.BytesIO()
    buf.write(header.encode("ascii"))
    if format == "ascii":
        np.savetxt(buf, pts, fmt="%d")
    else:
        buf.write(pts.astype("<i4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_xyz(path, scale=1.0, keep_duplicates=False):
    raw = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if raw.size == 0:
        raise EmptyCloud(f"{path}: no points")
    if raw.shape[1] != 3:
        raise CloudError(f"{path}: expected 3 columns, got {raw.shape[1]}")
    return voxelize(raw, scale, keep_duplicates=keep_duplicates)


def write_xyz(cloud, path):
    np.savetxt(path, np.asarray(cloud.points), fmt="%d")


def read_cloud(path, **kw):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".xyz":
        return read_xyz(path, **kw)
    return read_ply(path, **kw)

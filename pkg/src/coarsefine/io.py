"""PLY / CSV point clouds, 4x4 pose text files."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, as_points

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


class PointCloudFormatError(ValueError):
    pass


def _parse_ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise PointCloudFormatError(f"{path}: missing 'ply' magic")
    fmt = None
    elements = []  # (name, count, [(prop, dtype) ...])
    while True:
        line = fh.readline()
        if not line:
            raise PointCloudFormatError(f"{path}: header not terminated")
        words = line.decode("ascii", errors="replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "format":
            fmt = words[1]
        elif words[0] == "element":
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise PointCloudFormatError(f"{path}: property before element")
            if words[1] == "list":
                elements[-1][2].append((words[-1], "list:" + words[2] + ":" + words[3]))
            else:
                if words[1] not in _PLY_TYPES:
                    raise PointCloudFormatError(f"{path}: unknown PLY type {words[1]!r}")
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
        elif words[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise PointCloudFormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        if not elements or elements[0][0] != "vertex":
            raise PointCloudFormatError(f"{path}: first element must be 'vertex'")
        _, count, props = elements[0]
        names = [p[0] for p in props]
        for axis in "xyz":
            if axis not in names:
                raise PointCloudFormatError(f"{path}: vertex has no '{axis}' property")
        if any(d.startswith("list:") for _, d in props):
            raise PointCloudFormatError(f"{path}: list properties on vertices are not supported")
        if fmt == "ascii":
            rows = []
            for _ in range(count):
                line = fh.readline()
                if not line:
                    raise PointCloudFormatError(f"{path}: expected {count} vertices")
                rows.append(line.split()[: len(props)])
            data = np.array(rows, dtype=np.float64).reshape(count, len(props))
            cols = [names.index(a) for a in "xyz"]
            pts = data[:, cols]
        else:
            endian = "<" if fmt == "binary_little_endian" else ">"
            dtype = np.dtype([(n, endian + d) for n, d in props])
            raw = fh.read(dtype.itemsize * count)
            if len(raw) < dtype.itemsize * count:
                raise PointCloudFormatError(f"{path}: truncated binary vertex data")
            rec = np.frombuffer(raw, dtype=dtype, count=count)
            pts = np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
    return as_points(pts.reshape(-1, 3), str(path))


def write_ply(path, points, binary: bool = True) -> None:
    pts = as_points(points)
    fmt = f"binary_{sys.byteorder}_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(pts, dtype=np.float64).tobytes())
        else:
            for x, y, z in pts.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n".encode("ascii"))


def read_csv_points(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise PointCloudFormatError(f"{path}:{lineno}: expected 'x,y,z'")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise PointCloudFormatError(f"{path}:{lineno}: {exc}") from None
    return as_points(np.array(rows, dtype=np.float64).reshape(-1, 3), str(path))


def write_csv_points(path, points) -> None:
    pts = as_points(points)
    with open(path, "w") as fh:
        for x, y, z in pts.tolist():
            fh.write(f"{x!r},{y!r},{z!r}\n")


def read_points(path) -> np.ndarray:
    """Dispatch on extension: ``.ply`` or ``.csv``/``.txt``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix in (".csv", ".txt", ".xyz"):
        return read_csv_points(path)
    raise PointCloudFormatError(f"{path}: unknown point cloud extension {suffix!r}")


def write_points(path, points) -> None:
    if Path(path).suffix.lower() == ".ply":
        write_ply(path, points)
    else:
        write_csv_points(path, points)


def format_pose(t: RigidTransform) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in t.as_matrix()) + "\n"


def write_pose(path, t: RigidTransform) -> None:
    Path(path).write_text(format_pose(t))


def read_pose(path) -> RigidTransform:
    values = Path(path).read_text().split()
    if len(values) != 16:
        raise ValueError(f"{path}: expected 16 numbers for a 4x4 pose, found {len(values)}")
    m = np.array([float(v) for v in values]).reshape(4, 4)
    try:
        return RigidTransform.from_matrix(m)
    except ValueError:
        pass
    # poses printed with few digits: re-orthonormalize the round-off away
    u, _, vt = np.linalg.svd(m[:3, :3])
    r = u @ vt
    if np.abs(r - m[:3, :3]).max() > 1e-5:
        raise ValueError(f"{path}: upper-left 3x3 block is not a rotation")
    m[:3, :3] = r
    return RigidTransform.from_matrix(m)

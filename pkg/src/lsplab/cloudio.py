"""Point-cloud and mesh files: binary little-endian PLY and plain CSV.

Clouds are (n, 3) float arrays with optional unit normals. PLY files use
float32 vertex properties (x, y, z and optionally nx, ny, nz); CSV files
carry a header row. Meshes (for surface export) are written as PLY with a
face element. All writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .validate import as_points, as_unit_normals


class CloudFormatError(ValueError):
    """Raised for unreadable or unsupported cloud files."""


def _atomic_write(path, write_fn):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".cloud-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# PLY


def write_cloud_ply(path, points, normals=None):
    points = as_points(points)
    if normals is not None:
        normals = as_unit_normals(normals, len(points))
    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if normals is not None else [])
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(points)}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    data = points if normals is None else np.hstack([points, normals])
    blob = np.ascontiguousarray(data, dtype="<f4").tobytes()

    def emit(fh):
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(blob)

    _atomic_write(path, emit)


_PLY_SIZES = {"float": ("<f4", 4), "float32": ("<f4", 4),
              "double": ("<f8", 8), "float64": ("<f8", 8)}


def read_cloud_ply(path):
    """Read a binary little-endian PLY cloud; returns (points, normals|None)."""
    with open(path, "rb") as fh:
        first = fh.readline().strip()
        if first != b"ply":
            raise CloudFormatError(f"{path}: not a PLY file")
        fmt = None
        n_vertex = None
        props = []
        in_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise CloudFormatError(f"{path}: missing end_header")
            tokens = line.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                if tokens[1] == "list":
                    raise CloudFormatError(
                        f"{path}: list properties are not supported on vertices")
                props.append((tokens[2], tokens[1]))
            elif tokens[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise CloudFormatError(
                f"{path}: only binary_little_endian PLY is supported, "
                f"found {fmt!r}")
        if n_vertex is None:
            raise CloudFormatError(f"{path}: no vertex element")
        fields = []
        for name, typ in props:
            if typ not in _PLY_SIZES:
                raise CloudFormatError(
                    f"{path}: unsupported property type {typ!r}")
            fields.append((name, _PLY_SIZES[typ][0]))
        dtype = np.dtype(fields)
        raw = fh.read(n_vertex * dtype.itemsize)
        if len(raw) < n_vertex * dtype.itemsize:
            raise CloudFormatError(f"{path}: truncated vertex data")
        table = np.frombuffer(raw, dtype=dtype, count=n_vertex)
    names = {name for name, _ in props}
    if not {"x", "y", "z"} <= names:
        raise CloudFormatError(f"{path}: vertex element lacks x/y/z")
    points = np.stack([table[c].astype(np.float64) for c in "xyz"], axis=1)
    normals = None
    if {"nx", "ny", "nz"} <= names:
        normals = np.stack([table[c].astype(np.float64)
                            for c in ("nx", "ny", "nz")], axis=1)
    return points, normals


def write_mesh_ply(path, vertices, faces):
    """Write a triangle mesh (float32 vertices, int32 face indices)."""
    vertices = as_points(vertices, name="vertices")
    faces = np.asarray(faces)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValueError(f"faces must have shape (m, 3), got {faces.shape}")
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise ValueError("face indices out of range")
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(vertices)}",
              "property float x", "property float y", "property float z",
              f"element face {len(faces)}",
              "property list uchar int vertex_indices", "end_header"]
    vblob = np.ascontiguousarray(vertices, dtype="<f4").tobytes()
    ftable = np.empty(
        len(faces), dtype=np.dtype([("n", "u1"), ("idx", "<i4", (3,))]))
    ftable["n"] = 3
    ftable["idx"] = faces

    def emit(fh):
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vblob)
        fh.write(ftable.tobytes())

    _atomic_write(path, emit)


# ---------------------------------------------------------------------------
# CSV


def write_cloud_csv(path, points, normals=None):
    points = as_points(points)
    if normals is not None:
        normals = as_unit_normals(normals, len(points))
        data = np.hstack([points, normals])
        header = "x,y,z,nx,ny,nz"
    else:
        data = points
        header = "x,y,z"
    text = [header]
    text += [",".join(repr(float(v)) for v in row) for row in data]
    blob = ("\n".join(text) + "\n").encode("ascii")
    _atomic_write(path, lambda fh: fh.write(blob))


def read_cloud_csv(path):
    """Read an x,y,z[,nx,ny,nz] CSV; returns (points, normals|None)."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["x", "y", "z"]:
            raise CloudFormatError(f"{path}: expected an x,y,z header row")
        has_normals = header[3:6] == ["nx", "ny", "nz"]
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2, comments=None)
        except ValueError as exc:
            raise CloudFormatError(f"{path}: {exc}") from exc
    expected = 6 if has_normals else 3
    if data.shape[0] and data.shape[1] != expected:
        raise CloudFormatError(
            f"{path}: rows have {data.shape[1]} columns, expected {expected}")
    if data.shape[0] == 0:
        data = data.reshape(0, expected)
    points = data[:, :3]
    normals = data[:, 3:6] if has_normals else None
    return points, normals


# ---------------------------------------------------------------------------
# extension dispatch


def write_cloud(path, points, normals=None):
    """Write PLY or CSV depending on the file extension."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        write_cloud_ply(path, points, normals)
    elif ext == ".csv":
        write_cloud_csv(path, points, normals)
    else:
        raise ValueError(f"unsupported cloud extension {ext!r} (ply/csv)")


def read_cloud(path):
    """Read PLY or CSV depending on the file extension."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        return read_cloud_ply(path)
    if ext == ".csv":
        return read_cloud_csv(path)
    raise ValueError(f"unsupported cloud extension {ext!r} (ply/csv)")

"""Minimal PLY mesh I/O.

Vertices carry x/y/z plus optional float albedo (red/green/blue) and an
optional float quality channel (used for per-vertex error maps). Faces are
triangles. Binary little-endian is the default output; ASCII is supported
on both ends. An OBJ importer (positions/faces only) is included for
convenience.
"""

from __future__ import annotations

import numpy as np


class PLYError(IOError):
    pass


def write_ply(path, vertices, faces, albedo=None, quality=None, binary=True):
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    m = len(vertices)
    props = [("x", vertices[:, 0]), ("y", vertices[:, 1]), ("z", vertices[:, 2])]
    if albedo is not None:
        albedo = np.asarray(albedo, dtype=np.float64).reshape(m, 3)
        props += [("red", albedo[:, 0]), ("green", albedo[:, 1]), ("blue", albedo[:, 2])]
    if quality is not None:
        props.append(("quality", np.asarray(quality, dtype=np.float64).reshape(m)))

    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {m}"]
    header += [f"property float {name}" for name, _ in props]
    header += [f"element face {len(faces)}",
               "property list uchar int vertex_indices", "end_header"]

    vert_block = np.stack([v for _, v in props], axis=1).astype("<f4")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode())
        if binary:
            f.write(vert_block.tobytes())
            face_block = np.empty((len(faces), 13), dtype=np.uint8)
            face_block[:, 0] = 3
            face_block[:, 1:] = faces.astype("<i4").view(np.uint8).reshape(-1, 12)
            f.write(face_block.tobytes())
        else:
            for row in vert_block:
                f.write((" ".join(repr(float(v)) for v in row) + "\n").encode())
            for face in faces:
                f.write(f"3 {face[0]} {face[1]} {face[2]}\n".encode())


def read_ply(path):
    """Returns (vertices, faces, albedo-or-None, quality-or-None)."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise PLYError(f"{path}: not a PLY file")
        fmt = None
        elements = []  # (name, count, [(type, prop) ...])
        while True:
            line = f.readline()
            if not line:
                raise PLYError(f"{path}: missing end_header")
            tok = line.decode("ascii", "replace").split()
            if not tok or tok[0] == "comment":
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if tok[1] == "list":
                    elements[-1][2].append(("list", tok[2], tok[3], tok[4]))
                else:
                    elements[-1][2].append(("scalar", tok[1], tok[2]))
            elif tok[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise PLYError(f"{path}: unsupported format {fmt}")
        binary = fmt == "binary_little_endian"

        data = {}
        for name, count, props in elements:
            if name == "vertex":
                if any(p[0] != "scalar" for p in props):
                    raise PLYError("list properties on vertices unsupported")
                dt = np.dtype([(p[2], "<" + _np_type(p[1])) for p in props])
                if binary:
                    arr = np.frombuffer(f.read(dt.itemsize * count), dtype=dt)
                else:
                    rows = [f.readline().split() for _ in range(count)]
                    arr = np.array([tuple(map(float, r)) for r in rows], dtype=dt)
                data["vertex"] = arr
            elif name == "face":
                faces = np.empty((count, 3), dtype=np.int64)
                if binary:
                    cdt, idt = _np_type(props[0][1]), _np_type(props[0][2])
                    csz = np.dtype(cdt).itemsize
                    isz = np.dtype(idt).itemsize
                    for i in range(count):
                        n = int(np.frombuffer(f.read(csz), dtype="<" + cdt)[0])
                        idx = np.frombuffer(f.read(isz * n), dtype="<" + idt)
                        if n != 3:
                            raise PLYError("only triangle faces supported")
                        faces[i] = idx
                else:
                    for i in range(count):
                        tok = f.readline().split()
                        if int(tok[0]) != 3:
                            raise PLYError("only triangle faces supported")
                        faces[i] = [int(v) for v in tok[1:4]]
                data["face"] = faces
            else:
                raise PLYError(f"unsupported element {name}")

    v = data["vertex"]
    names = v.dtype.names
    vertices = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    albedo = None
    if all(c in names for c in ("red", "green", "blue")):
        albedo = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64)
    quality = v["quality"].astype(np.float64) if "quality" in names else None
    faces = data.get("face", np.zeros((0, 3), dtype=np.int64))
    return vertices, faces, albedo, quality


def _np_type(name):
    table = {
        "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
        "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
        "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
        "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
    }
    if name not in table:
        raise PLYError(f"unsupported property type {name}")
    return table[name]


def read_obj(path):
    """OBJ import, positions and triangular faces only."""
    vertices, faces = [], []
    with open(path) as f:
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                vertices.append([float(v) for v in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) - 1 for t in tok[1:]]
                if len(idx) != 3:
                    raise PLYError("only triangle faces supported in OBJ import")
                faces.append(idx)
    return np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64)

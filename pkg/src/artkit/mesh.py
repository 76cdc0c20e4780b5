"""Triangle meshes and the OBJ / PLY readers and writers used for link geometry."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MeshFormatError

__all__ = [
    "TriMesh",
    "box_mesh",
    "concatenate",
    "load_mesh",
    "save_mesh",
    "read_obj",
    "write_obj",
    "read_ply",
    "write_ply",
]


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh. ``vertices`` is (N, 3) float, ``faces`` is (M, 3) int."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshFormatError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> np.ndarray:
        """(M, 3, 3) array of triangle corner positions."""
        return self.vertices[self.faces]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise MeshFormatError("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def volume(self) -> float:
        """Enclosed volume by the divergence theorem (absolute value)."""
        tri = self.triangles
        if len(tri) == 0:
            return 0.0
        signed = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0
        return abs(float(signed))

    def is_closed(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        if len(self.faces) == 0:
            return False
        edges = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        edges.sort(axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "TriMesh":
        """Return ``scale * R @ v + t`` applied to every vertex."""
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        faces = self.faces
        if rotation is not None and np.linalg.det(rotation) < 0:
            faces = faces[:, ::-1]
        return TriMesh(v, faces)


def box_mesh(lo, hi) -> TriMesh:
    """Closed, outward-wound 12-triangle mesh of the box ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array(
        [[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)]
    )
    # corner index bits: x=1, y=2, z=4
    faces = np.array(
        [
            [0, 2, 3], [0, 3, 1],  # -z
            [4, 5, 7], [4, 7, 6],  # +z
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 6, 7], [2, 7, 3],  # +y
            [0, 4, 6], [0, 6, 2],  # -x
            [1, 3, 7], [1, 7, 5],  # +x
        ]
    )
    return TriMesh(corners, faces)


def concatenate(meshes) -> TriMesh:
    meshes = [m for m in meshes if m is not None]
    if not meshes:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


# -- OBJ -------------------------------------------------------------------------

def read_obj(text: str) -> TriMesh:
    """Parse ``v`` and ``f`` records; polygons are fan-triangulated."""
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                idx = []
                for p in parts[1:]:
                    i = int(p.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except ValueError as exc:
            raise MeshFormatError(f"OBJ line {lineno}: {exc}") from None
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh: TriMesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    return "\n".join(lines) + "\n"


# -- PLY -------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshFormatError("not a PLY file")
    nl = data.find(b"\n", end)
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[nl + 1:]
    fmt = None
    elements = []  # (name, count, [(prop_name, type) or (prop_name, ("list", ctype, itype))])
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError("PLY property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], ("list", parts[2], parts[3])))
            else:
                elements[-1][2].append((parts[2], parts[1]))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshFormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, body


def read_ply(data: bytes) -> tuple[dict, np.ndarray]:
    """Read a PLY file.

    Returns:
        ``(vertex_properties, faces)`` where ``vertex_properties`` maps each
        vertex property name to a 1-D array and ``faces`` is (M, 3), empty if
        the file has no faces.
    """
    fmt, elements, body = _parse_ply_header(data)
    props: dict[str, np.ndarray] = {}
    faces: list[list[int]] = []
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for name, count, plist in elements:
            rows = []
            for _ in range(count):
                row = []
                for _pname, ptype in plist:
                    if isinstance(ptype, tuple):
                        n = int(tokens[pos]); pos += 1
                        row.append([int(t) for t in tokens[pos:pos + n]]); pos += n
                    else:
                        row.append(float(tokens[pos])); pos += 1
                rows.append(row)
            _collect(name, plist, rows, props, faces)
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        pos = 0
        for name, count, plist in elements:
            if all(not isinstance(t, tuple) for _, t in plist):
                dtype = np.dtype([(p, endian + _PLY_TYPES[t]) for p, t in plist])
                arr = np.frombuffer(body, dtype=dtype, count=count, offset=pos)
                pos += dtype.itemsize * count
                if name == "vertex":
                    for p, _ in plist:
                        props[p] = arr[p].astype(np.float64)
                continue
            rows = []
            for _ in range(count):
                row = []
                for _pname, ptype in plist:
                    if isinstance(ptype, tuple):
                        _, ctype, itype = ptype
                        n = struct.unpack_from(endian + _PLY_TYPES[ctype], body, pos)[0]
                        pos += struct.calcsize(_PLY_TYPES[ctype])
                        fmt_i = endian + _PLY_TYPES[itype] * n
                        row.append(list(struct.unpack_from(fmt_i, body, pos)))
                        pos += struct.calcsize(fmt_i)
                    else:
                        code = endian + _PLY_TYPES[ptype]
                        row.append(struct.unpack_from(code, body, pos)[0])
                        pos += struct.calcsize(code)
                rows.append(row)
            _collect(name, plist, rows, props, faces)
    face_arr = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return props, face_arr


def _collect(name, plist, rows, props, faces):
    if name == "vertex":
        for k, (p, t) in enumerate(plist):
            if not isinstance(t, tuple):
                props[p] = np.array([r[k] for r in rows], dtype=np.float64)
    elif name == "face":
        for r in rows:
            idx = next(v for v in r if isinstance(v, list))
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])


def write_ply(vertices, faces=None, normals=None, binary: bool = True) -> bytes:
    """Serialize vertices (optionally with per-vertex normals and faces) as PLY."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    cols = [("x", v[:, 0]), ("y", v[:, 1]), ("z", v[:, 2])]
    if normals is not None:
        n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        cols += [("nx", n[:, 0]), ("ny", n[:, 1]), ("nz", n[:, 2])]
    f = np.zeros((0, 3), dtype=np.int64) if faces is None else np.asarray(faces).reshape(-1, 3)
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(v)}"]
    header += [f"property double {name}" for name, _ in cols]
    if len(f):
        header += [f"element face {len(f)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    out = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        dtype = np.dtype([(name, "<f8") for name, _ in cols])
        rec = np.empty(len(v), dtype=dtype)
        for name, col in cols:
            rec[name] = col
        out += rec.tobytes()
        if len(f):
            frec = np.empty(len(f), dtype=np.dtype([("n", "u1"), ("i", "<i4", (3,))]))
            frec["n"] = 3
            frec["i"] = f
            out += frec.tobytes()
    else:
        stacked = np.column_stack([c for _, c in cols])
        lines = [" ".join(repr(float(x)) for x in row) for row in stacked]
        lines += ["3 %d %d %d" % tuple(row) for row in f.tolist()]
        out += ("\n".join(lines) + "\n").encode("ascii")
    return out


# -- dispatch --------------------------------------------------------------------

def load_mesh(path) -> TriMesh:
    """Load an OBJ or PLY mesh; any other extension is rejected."""
    ext = os.path.splitext(str(path))[1].lower()
    try:
        if ext == ".obj":
            with open(path, encoding="utf-8") as fh:
                return read_obj(fh.read())
        if ext == ".ply":
            with open(path, "rb") as fh:
                props, faces = read_ply(fh.read())
            verts = np.column_stack([props["x"], props["y"], props["z"]])
            return TriMesh(verts, faces)
    except OSError as exc:
        raise MeshFormatError(f"cannot read mesh {path}: {exc}") from exc
    raise MeshFormatError(f"unsupported mesh format {ext!r} ({path}); use .obj or .ply")


def save_mesh(mesh: TriMesh, path) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(write_obj(mesh))
    elif ext == ".ply":
        with open(path, "wb") as fh:
            fh.write(write_ply(mesh.vertices, mesh.faces))
    else:
        raise MeshFormatError(f"unsupported mesh format {ext!r}")

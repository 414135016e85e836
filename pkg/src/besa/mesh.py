"""Triangle meshes, per-face geometry, the cotangent Laplacian and mesh IO."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ConnectivityError, DegenerateFaceError, MeshParseError

# Faces at or below this area are rejected by every metric computation.
DEGENERATE_AREA = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class TriMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (V, 3)
    faces : array_like of int, shape (F, 3)
        0-based vertex indices. The winding of each triple fixes the face
        normal.
    """

    __slots__ = ("vertices", "faces")

    def __init__(self, vertices, faces):
        v = _frozen(vertices, np.float64)
        f = _frozen(faces, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            if f.size == 0:
                f = _frozen(np.zeros((0, 3)), np.int64)
            else:
                raise ValueError(f"faces must have shape (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            bad = int(np.flatnonzero((f < 0).any(1) | (f >= len(v)).any(1))[0])
            raise ConnectivityError(
                f"face {bad} references vertex outside [0, {len(v)}): {f[bad].tolist()}"
            )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def __setattr__(self, name, value):
        raise AttributeError("TriMesh is immutable")

    def __repr__(self):
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def with_vertices(self, vertices):
        """Same connectivity, new positions."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        if vertices.shape[0] != self.n_vertices:
            raise ConnectivityError(
                f"expected {self.n_vertices} vertices, got {vertices.shape[0]}"
            )
        return TriMesh(vertices, self.faces)

    def same_connectivity(self, other):
        return (
            self.n_vertices == other.n_vertices
            and self.faces.shape == other.faces.shape
            and np.array_equal(self.faces, other.faces)
        )

    def translated(self, offset):
        return self.with_vertices(self.vertices + np.asarray(offset, dtype=float))

    def flipped(self):
        """Reverse the winding of every face."""
        return TriMesh(self.vertices, self.faces[:, ::-1])

    def face_areas(self):
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def total_area(self):
        return float(self.face_areas().sum())

    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


@dataclass(frozen=True)
class FaceData:
    """Per-face first-order geometry.

    Attributes
    ----------
    barycenters : (F, 3)
    normals : (F, 3) unit normals
    areas : (F,)
    dq : (F, 3, 2) embedded edge matrix ``[v1 - v0, v2 - v0]``
    g : (F, 2, 2) first fundamental form ``dq^T dq``
    """

    barycenters: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    dq: np.ndarray
    g: np.ndarray


def check_faces(areas, threshold=DEGENERATE_AREA, time_index=None):
    bad = np.flatnonzero(~(areas > threshold))
    if bad.size:
        raise DegenerateFaceError(bad[0], areas[bad[0]], time_index=time_index)


def face_geometry(mesh: TriMesh, check=True) -> FaceData:
    v = mesh.vertices[mesh.faces]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    cross = np.cross(e1, e2)
    norm = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norm
    if check:
        check_faces(areas)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = cross / norm[:, None]
    dq = np.stack([e1, e2], axis=2)
    g = np.einsum("fki,fkj->fij", dq, dq)
    return FaceData(
        barycenters=v.mean(axis=1),
        normals=normals,
        areas=areas,
        dq=dq,
        g=g,
    )


def corner_cotangents(mesh: TriMesh):
    """Cotangent of the interior angle at each face corner, shape (F, 3)."""
    v = mesh.vertices[mesh.faces]
    cots = np.empty((mesh.n_faces, 3))
    for i in range(3):
        a = v[:, (i + 1) % 3] - v[:, i]
        b = v[:, (i + 2) % 3] - v[:, i]
        cots[:, i] = np.einsum("fk,fk->f", a, b) / np.linalg.norm(np.cross(a, b), axis=1)
    return cots


def vertex_masses(mesh: TriMesh, areas=None):
    """Barycentric lumped mass: a third of the incident face areas."""
    if areas is None:
        areas = mesh.face_areas()
    return np.bincount(
        mesh.faces.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=mesh.n_vertices
    )


def cotangent_matrix(mesh: TriMesh, cots=None):
    """Symmetric matrix ``L`` with ``(L h)_v = sum_u w_uv (h_u - h_v)``.

    ``w_uv`` is half the sum of the cotangents opposite the edge ``uv``.
    Rows sum to zero.
    """
    if cots is None:
        cots = corner_cotangents(mesh)
    f = mesh.faces
    # corner i is opposite the edge (i+1, i+2)
    j = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    k = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([cots[:, 0], cots[:, 1], cots[:, 2]])
    n = mesh.n_vertices
    off = sparse.coo_matrix(
        (np.concatenate([w, w]), (np.concatenate([j, k]), np.concatenate([k, j]))),
        shape=(n, n),
    ).tocsr()
    diag = np.asarray(off.sum(axis=1)).ravel()
    return (off - sparse.diags(diag)).tocsr()


def laplacian_apply(mesh: TriMesh, field):
    """Mass-normalized cotangent Laplacian applied componentwise."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape[-2:] != (mesh.n_vertices, 3):
        raise ConnectivityError(
            f"field shape {field.shape} does not match mesh with {mesh.n_vertices} vertices"
        )
    check_faces(mesh.face_areas())
    lap = cotangent_matrix(mesh)
    mass = vertex_masses(mesh)
    flat = np.moveaxis(field, -2, 0).reshape(mesh.n_vertices, -1)
    out = (lap @ flat) / mass[:, None]
    return np.moveaxis(out.reshape((mesh.n_vertices,) + field.shape[:-2] + (3,)), 0, -2)


def subdivide(mesh: TriMesh) -> TriMesh:
    """1-to-4 midpoint subdivision. Geometry is unchanged (flat faces)."""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    nf = mesh.n_faces
    m01, m12, m20 = (inv[i * nf:(i + 1) * nf] + mesh.n_vertices for i in range(3))
    new_faces = np.concatenate([
        np.stack([f[:, 0], m01, m20], 1),
        np.stack([f[:, 1], m12, m01], 1),
        np.stack([f[:, 2], m20, m12], 1),
        np.stack([m01, m12, m20], 1),
    ])
    return TriMesh(np.concatenate([mesh.vertices, mids]), new_faces)


# ---------------------------------------------------------------------------
# IO


def load_mesh(path, format=None) -> TriMesh:
    """Read an OBJ (ASCII) or PLY (binary little-endian) file.

    ``format`` defaults to the file extension.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        mesh = _read_obj(path)
    elif fmt == "ply":
        mesh = _read_ply(path)
    else:
        raise MeshParseError(f"unsupported mesh format {fmt!r}", path)
    return mesh


def save_mesh(mesh: TriMesh, path, format=None):
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        data = obj_bytes(mesh)
    elif fmt == "ply":
        data = ply_bytes(mesh)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def _read_obj(path):
    verts = []
    faces = []
    face_lines = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshParseError("bad vertex coordinate", path, lineno) from None
                if len(verts[-1]) != 3:
                    raise MeshParseError("vertex needs 3 coordinates", path, lineno)
            elif tag == "f":
                try:
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                except ValueError:
                    raise MeshParseError("bad face index", path, lineno) from None
                if len(idx) != 3:
                    raise MeshParseError(
                        f"only triangles are supported, got {len(idx)} indices", path, lineno
                    )
                faces.append(idx)
                face_lines.append(lineno)
            # normals, texture coordinates, groups etc. are ignored
    if not faces:
        raise MeshParseError("no faces", path)
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64)
    nv = len(v)
    # OBJ: 1-based, negative means relative to the end
    f = np.where(f < 0, f + nv, f - 1)
    bad = np.flatnonzero(((f < 0) | (f >= nv)).any(axis=1))
    if bad.size:
        i = bad[0]
        raise MeshParseError(
            f"face index out of range (have {nv} vertices)", path, face_lines[i]
        )
    return TriMesh(v, f)


def obj_bytes(mesh: TriMesh) -> bytes:
    lines = ["v %.17g %.17g %.17g" % tuple(p) for p in mesh.vertices.tolist()]
    lines += ["f %d %d %d" % tuple(t) for t in (mesh.faces + 1).tolist()]
    return ("\n".join(lines) + "\n").encode("ascii")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        return parse_ply(fh.read(), path)


def parse_ply(data: bytes, path=None) -> TriMesh:
    """Parse binary little-endian PLY bytes."""
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError("not a PLY file", path, 0)
    nl = data.find(b"\n", end)
    body_start = nl + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []
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
                raise MeshParseError("property before element", path, 0)
            elements[-1][2].append(parts[1:])
    if fmt != "binary_little_endian":
        raise MeshParseError(f"unsupported PLY format {fmt!r}", path, 0)

    offset = body_start
    verts = faces = None
    for name, count, props in elements:
        if all(p[0] != "list" for p in props):
            try:
                dtype = np.dtype([(p[1], "<" + _PLY_TYPES[p[0]]) for p in props])
            except KeyError as exc:
                raise MeshParseError(f"unknown PLY type {exc}", path, offset) from None
            size = dtype.itemsize * count
            if offset + size > len(data):
                raise MeshParseError(f"truncated element {name!r}", path, offset)
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            offset += size
            if name == "vertex":
                verts = np.stack([arr[c].astype(np.float64) for c in ("x", "y", "z")], 1)
        elif name == "face" and len(props) == 1:
            _, ctype, itype, _ = props[0]
            cdt = np.dtype("<" + _PLY_TYPES[ctype])
            idt = np.dtype("<" + _PLY_TYPES[itype])
            rec = np.dtype([("n", cdt), ("idx", idt, (3,))])
            size = rec.itemsize * count
            if offset + size > len(data):
                raise MeshParseError("truncated face element", path, offset)
            arr = np.frombuffer(data, dtype=rec, count=count, offset=offset)
            if count and np.any(arr["n"] != 3):
                i = int(np.flatnonzero(arr["n"] != 3)[0])
                raise MeshParseError(
                    "only triangles are supported", path, offset + i * rec.itemsize
                )
            faces = arr["idx"].astype(np.int64)
            offset += size
        else:
            raise MeshParseError(f"unsupported PLY element {name!r}", path, offset)
    if verts is None:
        raise MeshParseError("no vertex element", path, 0)
    if faces is None or len(faces) == 0:
        raise MeshParseError("no faces", path, offset)
    bad = np.flatnonzero(((faces < 0) | (faces >= len(verts))).any(axis=1))
    if bad.size:
        raise MeshParseError(
            f"face {int(bad[0])} index out of range (have {len(verts)} vertices)", path, offset
        )
    return TriMesh(verts, faces)


def ply_bytes(mesh: TriMesh) -> bytes:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    rec = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.empty(mesh.n_faces, dtype=rec)
    faces["n"] = 3
    faces["idx"] = mesh.faces
    return header + mesh.vertices.astype("<f8").tobytes() + faces.tobytes()


def list_mesh_files(directory):
    """Mesh files in a directory, lexicographic order."""
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".obj", ".ply"))

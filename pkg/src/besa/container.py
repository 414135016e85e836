"""On-disk basis container.

A ``.besa`` file is a zip archive with fixed timestamps holding

* ``manifest.json``: ``format`` ("besa/1"), ``V``, ``F``, ``n``, ``m``,
  ``checksums`` (sha256 of every payload) and optional ``info``;
* ``template.ply``: the template mesh (binary little-endian PLY);
* ``pose_basis.f64`` and ``shape_basis.f64``: (n, 3V) and (m, 3V) float64
  little-endian row-major arrays.

Writing the same basis twice produces identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, DimensionError, MeshParseError
from .latent import Basis
from .mesh import parse_ply, ply_bytes

FORMAT = "besa/1"
_DATE = (1980, 1, 1, 0, 0, 0)
_PAYLOADS = ("template.ply", "pose_basis.f64", "shape_basis.f64")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _entry(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def basis_bytes(basis: Basis, info=None) -> bytes:
    V = basis.template.n_vertices
    blobs = {
        "template.ply": ply_bytes(basis.template),
        "pose_basis.f64": basis.pose_fields.reshape(basis.n, 3 * V).astype("<f8").tobytes(),
        "shape_basis.f64": basis.shape_fields.reshape(basis.m, 3 * V).astype("<f8").tobytes(),
    }
    manifest = {
        "format": FORMAT,
        "V": V,
        "F": basis.template.n_faces,
        "n": basis.n,
        "m": basis.m,
        "checksums": {k: _sha256(v) for k, v in blobs.items()},
    }
    if info is not None:
        manifest["info"] = info
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _entry(zf, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"))
        for name in _PAYLOADS:
            _entry(zf, name, blobs[name])
    return buf.getvalue()


def save_basis(basis: Basis, path, info=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(basis_bytes(basis, info))


def load_basis(path, return_manifest=False):
    """Read a container, verifying the format version, checksums and sizes."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise MeshParseError(f"not a basis container ({exc})", path=path) from exc
    with zf:
        names = set(zf.namelist())
        missing = [n for n in ("manifest.json",) + _PAYLOADS if n not in names]
        if missing:
            raise MeshParseError(f"container is missing {missing}", path=path)
        manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        if manifest.get("format") != FORMAT:
            raise MeshParseError(f"unsupported container format {manifest.get('format')!r}",
                                 path=path)
        blobs = {name: zf.read(name) for name in _PAYLOADS}
    for name, data in blobs.items():
        if _sha256(data) != manifest["checksums"].get(name):
            raise ConsistencyError(f"{path}: checksum mismatch for {name}")
    V, F, n, m = (int(manifest[k]) for k in ("V", "F", "n", "m"))
    template = parse_ply(blobs["template.ply"], path=f"{path}:template.ply")
    if template.n_vertices != V or template.n_faces != F:
        raise DimensionError(f"{path}: template size does not match the manifest")
    arrays = []
    for name, count in (("pose_basis.f64", n), ("shape_basis.f64", m)):
        data = blobs[name]
        if len(data) != count * 3 * V * 8:
            raise DimensionError(f"{path}: {name} has {len(data)} bytes, expected {count * 24 * V}")
        arrays.append(np.frombuffer(data, dtype="<f8").reshape(count, V, 3).astype(np.float64))
    basis = Basis(template, arrays[0], arrays[1])
    return (basis, manifest) if return_manifest else basis

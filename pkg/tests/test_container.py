import json
import zipfile

import numpy as np
import pytest

from besa.container import basis_bytes, load_basis, save_basis
from besa.errors import ConsistencyError, DimensionError, MeshParseError


def rewrite(src, dst, edit):
    """Copy a container, passing each (name, bytes) through ``edit``."""
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for name in zin.namelist():
            data = edit(name, zin.read(name))
            if data is not None:
                zout.writestr(name, data)


def test_roundtrip_bit_identical(tmp_path, small_basis):
    path = tmp_path / "b.besa"
    save_basis(small_basis, path, info={"note": "x"})
    back, manifest = load_basis(path, return_manifest=True)
    assert back.pose_fields.tobytes() == small_basis.pose_fields.tobytes()
    assert back.shape_fields.tobytes() == small_basis.shape_fields.tobytes()
    np.testing.assert_array_equal(back.template.vertices, small_basis.template.vertices)
    np.testing.assert_array_equal(back.template.faces, small_basis.template.faces)
    assert manifest["format"] == "besa/1" and manifest["info"] == {"note": "x"}
    assert (manifest["n"], manifest["m"], manifest["V"]) == (3, 2, small_basis.template.n_vertices)


def test_deterministic_bytes(small_basis):
    assert basis_bytes(small_basis) == basis_bytes(small_basis)


def test_payload_layout(tmp_path, small_basis):
    path = tmp_path / "b.besa"
    save_basis(small_basis, path)
    with zipfile.ZipFile(path) as zf:
        raw = np.frombuffer(zf.read("pose_basis.f64"), dtype="<f8")
    V = small_basis.template.n_vertices
    np.testing.assert_array_equal(raw.reshape(3, 3 * V), small_basis.pose_fields.reshape(3, -1))


def test_checksum_mismatch(tmp_path, small_basis):
    save_basis(small_basis, tmp_path / "b.besa")

    def flip(name, data):
        if name == "shape_basis.f64":
            data = bytearray(data)
            data[0] ^= 1
        return bytes(data)

    rewrite(tmp_path / "b.besa", tmp_path / "c.besa", flip)
    with pytest.raises(ConsistencyError):
        load_basis(tmp_path / "c.besa")


def test_size_mismatch(tmp_path, small_basis):
    save_basis(small_basis, tmp_path / "b.besa")

    def bump(name, data):
        if name == "manifest.json":
            m = json.loads(data)
            m["n"] = 4
            return json.dumps(m).encode()
        return data

    rewrite(tmp_path / "b.besa", tmp_path / "c.besa", bump)
    with pytest.raises(DimensionError):
        load_basis(tmp_path / "c.besa")


def test_bad_containers(tmp_path, small_basis):
    (tmp_path / "junk.besa").write_bytes(b"not a zip")
    with pytest.raises(MeshParseError):
        load_basis(tmp_path / "junk.besa")
    save_basis(small_basis, tmp_path / "b.besa")
    rewrite(tmp_path / "b.besa", tmp_path / "c.besa",
            lambda name, data: None if name == "template.ply" else data)
    with pytest.raises(MeshParseError):
        load_basis(tmp_path / "c.besa")

    def version(name, data):
        if name == "manifest.json":
            m = json.loads(data)
            m["format"] = "besa/2"
            return json.dumps(m).encode()
        return data

    rewrite(tmp_path / "b.besa", tmp_path / "d.besa", version)
    with pytest.raises(MeshParseError):
        load_basis(tmp_path / "d.besa")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from besa.basis import TangentSample, build_basis, motion_tangents, pca_basis, shape_tangents
from besa.errors import ConnectivityError, DimensionError, RankDeficiencyError
from besa.mesh import TriMesh
from besa.synthetic import smooth_field, torus

TM = torus(6, 5, scale=0.5)
V = TM.n_vertices


def test_constant_sequence_gives_zero_samples():
    s = motion_tangents([[TM, TM, TM]], TM)
    assert len(s) == 2 and all(not np.any(x.field) for x in s)
    assert [x.source for x in s] == [(0, 0), (0, 1)]


def test_two_frame_sequence(rng):
    h = rng.normal(size=(V, 3))
    s = shape_tangents([[TM, TM.with_vertices(TM.vertices + h)]], TM)
    assert len(s) == 1
    np.testing.assert_allclose(s[0].field, h, atol=1e-15)


def test_telescoping(rng):
    frames = TM.vertices + rng.normal(size=(7, V, 3))
    s = motion_tangents([frames], TM)
    assert len(s) == 6
    total = np.sum([x.field for x in s], axis=0)
    np.testing.assert_allclose(total, frames[-1] - frames[0], atol=1e-12)


def test_velocity_scale(rng):
    frames = TM.vertices + rng.normal(size=(3, V, 3))
    a = motion_tangents([frames], TM)
    b = motion_tangents([frames], TM, scale=2.5)
    np.testing.assert_allclose(b[1].field, 2.5 * a[1].field)


def test_connectivity_errors():
    other = TriMesh(TM.vertices, TM.faces[::-1])
    with pytest.raises(ConnectivityError, match="sequence 1 frame 2"):
        motion_tangents([[TM, TM], [TM, TM, other]], TM)
    with pytest.raises(DimensionError):
        motion_tangents([[TM]], TM)


def test_planted_subspace(rng):
    U = np.linalg.qr(rng.normal(size=(3 * V, 3)))[0]
    X = rng.normal(size=(40, 3)) @ U.T
    res = pca_basis([x.reshape(V, 3) for x in X], 3)
    C = res.components.reshape(3, -1)
    np.testing.assert_allclose(C @ C.T, np.eye(3), atol=1e-10)
    recon = (X @ C.T) @ C
    assert np.linalg.norm(recon - X) <= 1e-10 * np.linalg.norm(X)


def test_antipodal_pair(rng):
    h = rng.normal(size=(V, 3))
    res = pca_basis([h, -h], 1)
    c = res.components[0]
    unit = h / np.linalg.norm(h)
    assert min(np.abs(c - unit).max(), np.abs(c + unit).max()) < 1e-12
    # sign rule: the largest-magnitude entry is positive
    assert c.ravel()[np.argmax(np.abs(c))] > 0


def test_spectrum_against_full_decomposition(rng):
    X = rng.normal(size=(50, V, 3))
    res = pca_basis(X, 10)
    C = res.components.reshape(10, -1)
    np.testing.assert_allclose(C @ C.T, np.eye(10), atol=1e-10)
    ev = np.linalg.eigvalsh(X.reshape(50, -1) @ X.reshape(50, -1).T)[::-1]
    assert abs(res.residual_variance() - ev[10:].sum()) <= 1e-10 * ev.sum()
    np.testing.assert_allclose(res.explained_variance[:50], ev, rtol=1e-9)
    assert np.all(np.diff(res.singular_values) <= 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_reconstruction_error_nonincreasing(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(12, V, 3))
    flat = X.reshape(12, -1)
    errs = []
    for k in range(1, 12):
        C = pca_basis(X, k).components.reshape(k, -1)
        errs.append(np.linalg.norm(flat - flat @ C.T @ C))
    assert np.all(np.diff(errs) <= 1e-10 * errs[0])


def test_centering(rng):
    X = rng.normal(size=(20, V, 3)) + 5.0
    res = pca_basis(X, 2, center=True)
    np.testing.assert_allclose(res.mean, X.mean(axis=0))


def test_pca_errors(rng):
    with pytest.raises(DimensionError):
        pca_basis(rng.normal(size=(3, V, 3)), 4)
    with pytest.raises(DimensionError):
        pca_basis([], 1)
    with pytest.raises(RankDeficiencyError):
        pca_basis(np.zeros((3, V, 3)), 1)


def test_deterministic(rng):
    X = [TangentSample(x) for x in rng.normal(size=(10, V, 3))]
    a = pca_basis(X, 4).components
    b = pca_basis(X, 4).components
    np.testing.assert_array_equal(a, b)


def test_build_basis_orthogonal_singletons(rng):
    h = smooth_field(TM, rng)
    k = rng.normal(size=(V, 3))
    k -= (k.ravel() @ h.ravel()) / (h.ravel() @ h.ravel()) * h
    basis, info = build_basis([h], [k], 1, 1, TM)
    X = basis.fields.reshape(2, -1)
    np.testing.assert_allclose(X @ X.T, np.eye(2), atol=1e-12)
    np.testing.assert_array_equal(basis.decode(np.zeros(2)).vertices, TM.vertices)
    assert info["gram_condition"] == pytest.approx(1.0)


def test_build_basis_collision(rng):
    shared = smooth_field(TM, rng)
    motion = [shared] + [smooth_field(TM, rng) for _ in range(3)]
    with pytest.raises(RankDeficiencyError) as exc:
        build_basis(motion[:1], [shared], 1, 1, TM)
    assert exc.value.pairs == [(0, 1)]


def test_build_basis_defaults_desk_scale(desk_data):
    tm = desk_data["template"]
    ms = motion_tangents(desk_data["motions"], tm)
    ss = shape_tangents(desk_data["shapes"], tm)
    assert len(ms) >= 200 and len(ss) >= 60
    basis, info = build_basis(ms, ss, 130, 40, tm)
    assert (basis.n, basis.m) == (130, 40)
    assert basis.check_independence().min() > 0
    for fields in (basis.pose_fields, basis.shape_fields):
        X = fields.reshape(fields.shape[0], -1)
        np.testing.assert_allclose(X @ X.T, np.eye(X.shape[0]), atol=1e-10)
    np.testing.assert_array_equal(basis.decode(np.zeros(170)).vertices, tm.vertices)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from besa.errors import ConnectivityError, DegenerateFaceError
from besa.mesh import TriMesh
from besa.metric import (FootpointMetric, MetricParams, h2_inner, h2_inner_footpoint_grad,
                         h2_vertex_grad, split_differential)
from besa.synthetic import grid, random_mesh, random_rotation, smooth_field

import oracles

TRI = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
UNIT = [MetricParams(*np.eye(6)[i]) for i in range(6)]


def pairing(g, X, Y):
    """tr(g^-1 X^T Y) per face."""
    return np.einsum("fij,fkj,fki->f", np.linalg.inv(g), X, Y)


def test_params_parse_and_validate():
    p = MetricParams.parse("1,1000,100,1,1,1")
    assert p == MetricParams()
    assert str(p) == "1,1000,100,1,1,1"
    with pytest.raises(ValueError):
        MetricParams.parse("1,2,3")
    with pytest.raises(ValueError):
        MetricParams(-1, 0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        MetricParams(0, 0, 0, 0, 0, 0)


def test_split_identity_field_is_pure_stretch():
    m = grid(5, 4)
    s = split_differential(m, m.vertices)
    dq = np.stack([m.vertices[m.faces[:, 1]] - m.vertices[m.faces[:, 0]],
                   m.vertices[m.faces[:, 2]] - m.vertices[m.faces[:, 0]]], axis=2)
    np.testing.assert_allclose(s.stretch, dq, atol=1e-14)
    for part in (s.shear, s.bend, s.skew):
        assert np.abs(part).max() < 1e-14


def test_split_bending_field():
    m = grid(5, 4)
    h = np.zeros_like(m.vertices)
    h[:, 2] = m.vertices[:, 0]
    s = split_differential(m, h)
    for part in (s.shear, s.stretch, s.skew):
        assert np.abs(part).max() < 1e-14
    assert np.abs(s.bend).max() > 0.1


def test_split_matches_oracle(rng):
    m = random_mesh(rng, (50, 150))
    h = rng.normal(size=m.vertices.shape)
    s = split_differential(m, h)
    ref, _ = oracles.split_parts(m.vertices, m.faces, h)
    for key in ("shear", "stretch", "bend", "skew"):
        np.testing.assert_allclose(getattr(s, key), [r[key] for r in ref], atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_split_invariants(seed):
    r = np.random.default_rng(seed)
    m = random_mesh(r, (50, 200))
    h = r.normal(size=m.vertices.shape)
    metric = FootpointMetric(m)
    s = metric.split(h)
    dh = metric.differential(h)
    scale = np.abs(dh).max()
    assert np.abs(s.total() - dh).max() <= 1e-10 * scale
    g = np.einsum("fki,fkj->fij", *(2 * [np.stack([
        m.vertices[m.faces[:, 1]] - m.vertices[m.faces[:, 0]],
        m.vertices[m.faces[:, 2]] - m.vertices[m.faces[:, 0]]], axis=2)]))
    parts = [s.shear, s.stretch, s.bend, s.skew]
    norms = [np.abs(pairing(g, x, x)) for x in parts]
    for i in range(4):
        for j in range(i + 1, 4):
            cross = np.abs(pairing(g, parts[i], parts[j]))
            assert np.all(cross <= 1e-10 * (1 + np.sqrt(norms[i] * norms[j])))


def test_inner_zero_and_constant():
    m = TRI
    z = np.zeros((3, 3))
    assert h2_inner(m, z, z) == 0.0
    c = np.tile([1.0, 0, 0], (3, 1))
    assert abs(h2_inner(m, c, c, UNIT[0]) - 0.5) < 1e-15
    r = np.random.default_rng(1)
    mm = random_mesh(r)
    cc = np.tile(r.normal(size=3), (mm.n_vertices, 1))
    val = h2_inner(mm, cc, cc, MetricParams())
    assert abs(val - (cc[0] @ cc[0]) * mm.total_area()) < 1e-9 * val


def test_term_isolation(rng):
    m = random_mesh(rng, (50, 150))
    h, k = (smooth_field(m, rng) for _ in range(2))
    ref = oracles.metric_terms(m.vertices, m.faces, h, k)
    for i, p in enumerate(UNIT):
        val = h2_inner(m, h, k, p)
        assert abs(val - ref[i]) <= 1e-9 * abs(ref).max(), i


def test_apply_is_riesz_map(rng):
    m = random_mesh(rng, (50, 200))
    h, k = rng.normal(size=(2, m.n_vertices, 3))
    metric = FootpointMetric(m, MetricParams(0.3, 2, 3, 5, 7, 11))
    assert abs(np.sum(metric.apply(h) * k) - metric.inner(h, k)) <= 1e-10 * abs(metric.inner(h, k))
    assert abs(metric.norm_sq(h) - metric.inner(h, h)) <= 1e-10 * metric.inner(h, h)


def test_symmetric_exact(rng):
    m = random_mesh(rng)
    h, k = rng.normal(size=(2, m.n_vertices, 3))
    assert h2_inner(m, h, k) == h2_inner(m, k, h)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-5, 5), st.floats(-5, 5))
def test_bilinear(seed, a, b):
    r = np.random.default_rng(seed)
    m = random_mesh(r, (50, 150))
    h1, h2, k = r.normal(size=(3, m.n_vertices, 3))
    lhs = h2_inner(m, a * h1 + b * h2, k)
    rhs = a * h2_inner(m, h1, k) + b * h2_inner(m, h2, k)
    scale = abs(a) * abs(h2_inner(m, h1, h1)) + abs(b) * abs(h2_inner(m, h2, h2)) + h2_inner(m, k, k)
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_positive_semidefinite(rng):
    m = random_mesh(rng, (50, 150))
    metric = FootpointMetric(m)
    H = rng.normal(size=(1000, m.n_vertices, 3)) * rng.lognormal(size=(1000, 1, 1))
    vals = metric.inner(H, H)
    assert vals.min() > 0
    no_zeroth = FootpointMetric(m, MetricParams(0, 1, 1, 1, 1, 1))
    assert no_zeroth.inner(H[:50], H[:50]).min() >= -1e-12


def test_rigid_invariance(rng):
    for _ in range(5):
        m = random_mesh(rng)
        h, k = rng.normal(size=(2, m.n_vertices, 3))
        R, t = random_rotation(rng), rng.normal(size=3)
        m2 = m.with_vertices(m.vertices @ R.T + t)
        a, b = h2_inner(m, h, k), h2_inner(m2, h @ R.T, k @ R.T)
        assert abs(a - b) <= 1e-10 * abs(a)


def test_connectivity_mismatch():
    with pytest.raises(ConnectivityError):
        h2_inner(TRI, np.zeros((4, 3)), np.zeros((4, 3)))


def test_degenerate_footpoint():
    bad = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(DegenerateFaceError):
        h2_inner(bad, np.zeros((3, 3)), np.zeros((3, 3)))


def test_near_degenerate_face_uses_pinv():
    # area between the hard threshold and the pseudo-inverse band
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0.5, 1e-10, 0], [0.5, 1, 0]], [[0, 1, 2], [0, 1, 3]])
    h = np.random.default_rng(0).normal(size=(4, 3))
    val = h2_inner(m, h, h)
    assert np.isfinite(val) and val >= 0


def test_stacked_footpoints(rng):
    m = random_mesh(rng, (50, 150))
    P = m.vertices + 0.02 * rng.normal(size=(4, m.n_vertices, 3))
    H = rng.normal(size=(4, m.n_vertices, 3))
    metric = FootpointMetric(P, MetricParams(), m.faces)
    stacked = metric.inner(H, H)
    single = [h2_inner(TriMesh(P[i], m.faces), H[i], H[i]) for i in range(4)]
    np.testing.assert_allclose(stacked, single, rtol=1e-12)


def test_vertex_grad_fd(rng):
    m = random_mesh(rng, (50, 100))
    h, k = (smooth_field(m, rng) for _ in range(2))
    p = MetricParams(0.7, 3, 2, 1.5, 0.5, 0.2)
    g = h2_vertex_grad(m, h, k, p)
    fd = oracles.central_fd(lambda v: h2_inner(m.with_vertices(v), h, k, p), m.vertices)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_footpoint_grad_fd(rng):
    m = random_mesh(rng, (50, 100))
    J = np.stack([smooth_field(m, rng).ravel() for _ in range(6)], axis=1)
    h, k = (smooth_field(m, rng) for _ in range(2))
    p = MetricParams()

    def mesh_fn(theta):
        return m.with_vertices(m.vertices + (J @ theta).reshape(-1, 3))

    theta = 0.1 * rng.normal(size=6)
    g = h2_inner_footpoint_grad(mesh_fn, theta, h, k, p, jacobian=lambda t: J)
    fd = oracles.central_fd(lambda t: h2_inner(mesh_fn(t), h, k, p), theta)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)
    zero = np.zeros_like(h)
    assert not np.any(h2_inner_footpoint_grad(mesh_fn, theta, zero, zero, p,
                                              jacobian=lambda t: J))


def test_footpoint_grad_translation_zero(rng):
    m = random_mesh(rng, (50, 100))
    h, k = rng.normal(size=(2, m.n_vertices, 3))
    J = np.tile(np.eye(3), (m.n_vertices, 1))

    def mesh_fn(t):
        return m.translated(t)

    g = h2_inner_footpoint_grad(mesh_fn, np.zeros(3), h, k, UNIT[0], jacobian=lambda t: J)
    assert np.abs(g).max() <= 1e-12 * abs(h2_inner(m, h, k, UNIT[0]))


def test_footpoint_grad_requires_jacobian():
    with pytest.raises(TypeError):
        h2_inner_footpoint_grad(lambda t: TRI, np.zeros(1), np.zeros((3, 3)), np.zeros((3, 3)))

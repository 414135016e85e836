import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

import besa.discrepancy as disc
from besa.discrepancy import (VarifoldConfig, VarifoldTarget, chamfer_distance,
                              hausdorff_distance, point_triangle_distance, varifold_distance_sq,
                              varifold_gradient)
from besa.errors import ConsistencyError, DegenerateFaceError
from besa.mesh import TriMesh, subdivide
from besa.synthetic import random_mesh, random_rotation

import oracles

TRI = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def small_mesh(r, n_faces):
    """Random open triangle soup-like strip with ``n_faces`` faces."""
    v = r.normal(size=(n_faces + 2, 3))
    f = np.array([[i, i + 1, i + 2] for i in range(n_faces)])
    return TriMesh(v, f)


def test_identical_meshes_zero(rng):
    m = random_mesh(rng, (50, 200))
    d = varifold_distance_sq(m, TriMesh(m.vertices.copy(), m.faces.copy()))
    assert 0 <= d <= 1e-10 * m.total_area() ** 2


def test_far_translation_two_triangles():
    d = varifold_distance_sq(TRI, TRI.translated([10, 0, 0]), VarifoldConfig(0.025))
    assert abs(d - 0.5) < 1e-12
    ref = oracles.varifold_naive(TRI.vertices, TRI.faces, TRI.vertices + [10, 0, 0], TRI.faces,
                                 0.025)
    assert abs(ref - 0.5) < 1e-12


def test_orientation_blind(rng):
    a, b = random_mesh(rng, (50, 150)), random_mesh(rng, (50, 150))
    cfg = VarifoldConfig(0.4)
    assert abs(varifold_distance_sq(a, b, cfg) - varifold_distance_sq(a, b.flipped(), cfg)) \
        <= 1e-12 * varifold_distance_sq(a, b, cfg)


def test_matches_naive_oracle(rng):
    for _ in range(5):
        a, b = small_mesh(rng, rng.integers(1, 21)), small_mesh(rng, rng.integers(1, 21))
        s = rng.uniform(0.2, 2.0)
        ours = varifold_distance_sq(a, b, VarifoldConfig(s))
        ref = oracles.varifold_naive(a.vertices, a.faces, b.vertices, b.faces, s)
        assert abs(ours - ref) <= 1e-12 * abs(ref)


def test_exactly_symmetric(rng):
    a, b = random_mesh(rng), random_mesh(rng)
    assert varifold_distance_sq(a, b) == varifold_distance_sq(b, a)


def test_tile_size_independent(rng, monkeypatch):
    a, b = random_mesh(rng, (300, 500)), random_mesh(rng, (300, 500))
    ref = varifold_distance_sq(a, b)
    gref = varifold_gradient(a, b)
    for tile in (1, 1 << 8, 1 << 22):
        monkeypatch.setattr(disc, "_TILE_ELEMENTS", tile)
        assert abs(varifold_distance_sq(a, b) - ref) <= 1e-12 * ref
        np.testing.assert_allclose(varifold_gradient(a, b), gref, rtol=1e-10,
                                   atol=1e-12 * np.abs(gref).max())


def test_rigid_invariance(rng):
    a, b = random_mesh(rng, (50, 200)), random_mesh(rng, (50, 200))
    d = varifold_distance_sq(a, b)
    R, t = random_rotation(rng), rng.normal(size=3) * 3
    a2 = a.with_vertices(a.vertices @ R.T + t)
    b2 = b.with_vertices(b.vertices @ R.T + t)
    assert abs(varifold_distance_sq(a2, b2) - d) <= 1e-10 * d
    assert abs(varifold_distance_sq(a.translated(t), b.translated(t)) - d) <= 1e-10 * d


def test_refinement_consistency(rng):
    m = random_mesh(rng, (50, 200))
    s1 = subdivide(m)
    s2 = subdivide(s1)
    s3 = subdivide(s2)
    cfg = VarifoldConfig(0.4)
    norm = varifold_distance_sq(m, m.translated([1e3, 0, 0]), cfg)
    gaps = [varifold_distance_sq(x, y, cfg) / norm for x, y in ((m, s1), (s1, s2), (s2, s3))]
    assert gaps[0] > gaps[1] > gaps[2]


def test_degenerate_face_raises():
    bad = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(DegenerateFaceError):
        varifold_distance_sq(bad, TRI)


def test_clamp_rules():
    assert disc._clamp(-1e-12, 1.0) == 0.0
    assert disc._clamp(0.3, 1.0) == 0.3
    with pytest.raises(ConsistencyError):
        disc._clamp(-1e-6, 1.0)


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        VarifoldConfig(0.0)


def test_gradient_zero_at_minimum(rng):
    m = random_mesh(rng, (50, 200))
    g = varifold_gradient(m, m)
    assert np.linalg.norm(g) <= 1e-8 * m.total_area() ** 2


def test_gradient_fd_small(rng):
    a, b = small_mesh(rng, 6), small_mesh(rng, 4)
    cfg = VarifoldConfig(0.4)
    g = varifold_gradient(a, b, cfg)
    fd = oracles.central_fd(lambda v: varifold_distance_sq(a.with_vertices(v), b, cfg), a.vertices)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_gradient_far_apart_is_self_term(rng):
    a = random_mesh(rng, (50, 150))
    b = random_mesh(rng, (50, 150)).translated([100, 0, 0])
    cfg = VarifoldConfig(0.4)
    g = varifold_gradient(a, b, cfg)
    # self term alone: distance to a far-away copy with no overlap
    far = TriMesh([[1e4, 0, 0], [1e4 + 1, 0, 0], [1e4, 1, 0]], [[0, 1, 2]])
    g_self = varifold_gradient(a, far, cfg)
    assert np.abs(g - g_self).max() <= 1e-12


def test_target_value_matches_function(rng):
    a, b = random_mesh(rng), random_mesh(rng)
    t = VarifoldTarget(b)
    for s in (0.4, 0.1):
        assert t.value(a.vertices, a.faces, s) == varifold_distance_sq(a, b, VarifoldConfig(s))
        v, _ = t.value_and_grad(a.vertices, a.faces, s)
        assert abs(v - varifold_distance_sq(a, b, VarifoldConfig(s))) <= 1e-12 * v


def test_chamfer_examples(rng):
    assert chamfer_distance([[0, 0, 0]], [[3, 4, 0]]) == 10.0
    A = rng.normal(size=(100, 3))
    assert chamfer_distance(A, A) == 0.0
    extra = np.array([[5.0, 5.0, 5.0]])
    B = np.vstack([A, extra])
    expect = np.min(np.linalg.norm(A - extra, axis=1)) / 101
    assert abs(chamfer_distance(A, B) - expect) < 1e-12
    with pytest.raises(ValueError):
        chamfer_distance(np.zeros((0, 3)), A)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 40), st.integers(1, 40))
def test_chamfer_symmetric_bruteforce(seed, na, nb):
    r = np.random.default_rng(seed)
    A, B = r.normal(size=(na, 3)), r.normal(size=(nb, 3))
    D = cdist(A, B)
    ref = D.min(axis=1).mean() + D.min(axis=0).mean()
    assert abs(chamfer_distance(A, B) - ref) < 1e-12
    assert chamfer_distance(A, B) == chamfer_distance(B, A)


def test_hausdorff_examples():
    assert hausdorff_distance(TRI, TRI) == 0.0
    assert abs(hausdorff_distance(TRI, TRI.translated([0, 0, 2])) - 2.0) < 1e-15


def test_hausdorff_bruteforce(rng):
    for _ in range(3):
        a, b = small_mesh(rng, 10), small_mesh(rng, 10)
        ref = oracles.hausdorff_bruteforce(a.vertices, a.faces, b.vertices, b.faces)
        assert abs(hausdorff_distance(a, b) - ref) <= 1e-10
        assert hausdorff_distance(a, b) == hausdorff_distance(b, a)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_point_triangle_oracle(seed):
    r = np.random.default_rng(seed)
    tri = r.normal(size=(3, 3))
    pts = r.normal(size=(20, 3)) * 2
    ours = point_triangle_distance(pts, tri[None])[:, 0]
    ref = [oracles.point_triangle(p, *tri) for p in pts]
    np.testing.assert_allclose(ours, ref, atol=1e-12)

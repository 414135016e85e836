"""Split second-order Sobolev metric on deformation fields of a triangle mesh.

For a footpoint mesh ``q`` and vertex fields ``h``, ``k`` the inner product is

    G_q(h, k) = a0 sum_v M_v <h_v, k_v>
              + sum_f area_f [a1 <dh_m, dk_m> + b1 <dh_+, dk_+>
                              + c1 <dh_perp, dk_perp> + d1 <dh_0, dk_0>]
              + a2 sum_v M_v <(Lap h)_v, (Lap k)_v>

where ``<X, Y> = tr(g^{-1} X^T Y)`` pairs 3x2 one-forms on a face and ``M``
is the lumped vertex mass. Per face, ``dh = dq A + n b`` with
``A = g^{-1} dq^T dh`` and ``b = n^T dh``. The tangential coefficient ``A``
splits into its g-self-adjoint traceless part (shear), its trace part
(stretch) and its g-skew part; ``n b`` is the bending part.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np
from scipy import sparse

from .errors import ConnectivityError
from .mesh import DEGENERATE_AREA, TriMesh, check_faces

# Faces with area below this use an eigenvalue-thresholded pseudo-inverse of g.
NEAR_DEGENERATE_AREA = 1e-9
PINV_CUTOFF = 1e-9

# Upper bound on the size of temporaries in the footpoint derivative.
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class MetricParams:
    """Weights ``(a0, a1, b1, c1, d1, a2)`` of the six metric terms."""

    a0: float = 1.0
    a1: float = 1000.0
    b1: float = 100.0
    c1: float = 1.0
    d1: float = 1.0
    a2: float = 1.0

    def __post_init__(self):
        vals = astuple(self)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"metric coefficients must be finite and nonnegative: {vals}")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one metric coefficient must be positive")

    def as_array(self):
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def parse(cls, text):
        """Parse ``"a0,a1,b1,c1,d1,a2"``."""
        parts = [p for p in str(text).replace(" ", "").split(",") if p]
        if len(parts) != 6:
            raise ValueError(f"expected 6 comma-separated metric coefficients, got {text!r}")
        return cls(*(float(p) for p in parts))

    def __str__(self):
        return ",".join(f"{v:g}" for v in astuple(self))


@dataclass(frozen=True)
class SplitDifferential:
    """The four g-orthogonal parts of ``dh`` on every face, each (..., F, 3, 2)."""

    shear: np.ndarray
    stretch: np.ndarray
    bend: np.ndarray
    skew: np.ndarray

    def total(self):
        return self.shear + self.stretch + self.bend + self.skew


_CORNER_CACHE = {}


def _corner_operator(faces, n_vertices):
    """Sparse (V, 3F) matrix summing per-corner values onto vertices.

    Column ``c * F + f`` is corner ``c`` of face ``f``.
    """
    key = (n_vertices, faces.shape[0], hash(faces.tobytes()))
    op = _CORNER_CACHE.get(key)
    if op is None:
        nf = faces.shape[0]
        op = sparse.csr_matrix(
            (np.ones(3 * nf), (faces.T.ravel(), np.arange(3 * nf))), shape=(n_vertices, 3 * nf)
        )
        if len(_CORNER_CACHE) > 32:
            _CORNER_CACHE.clear()
        _CORNER_CACHE[key] = op
    return op


# Small dense algebra in component-first layout: a 3-vector is an array of
# shape (3, *S), a 2x2 or 3x2 matrix has shape (2, 2, *S) or (3, 2, *S). This
# keeps the per-face loops inside numpy's contiguous elementwise kernels.


def _mm(a, b):
    ni, nj = a.shape[:2]
    nk = b.shape[1]
    return np.array([[sum(a[i, j] * b[j, k] for j in range(nj)) for k in range(nk)]
                     for i in range(ni)])


def _mv(a, x):
    return np.array([sum(a[i, j] * x[j] for j in range(a.shape[1])) for i in range(a.shape[0])])


def _tm(a):
    return np.swapaxes(a, 0, 1)


def _tr(a):
    return a[0, 0] + a[1, 1]


def _trprod(a, b):
    """tr(a @ b) for 2x2 matrices."""
    return a[0, 0] * b[0, 0] + a[0, 1] * b[1, 0] + a[1, 0] * b[0, 1] + a[1, 1] * b[1, 1]


def _vdot(x, y):
    return sum(x[i] * y[i] for i in range(x.shape[0]))


def _cross(x, y):
    return np.array([x[1] * y[2] - x[2] * y[1],
                     x[2] * y[0] - x[0] * y[2],
                     x[0] * y[1] - x[1] * y[0]])


def _outer(x, y):
    return x[:, None] * y[None, :]


_EYE2 = np.eye(2)


class FootpointMetric:
    """The metric frozen at one footpoint, or at a stack of footpoints.

    Parameters
    ----------
    footpoint : TriMesh or array_like, shape (..., V, 3)
        A mesh, or vertex positions sharing the connectivity ``faces``.
        Leading axes describe a stack of footpoints (for instance all time
        steps of a path).
    params : MetricParams
    faces : array_like, shape (F, 3), optional
        Required when ``footpoint`` is a vertex array.

    Notes
    -----
    Fields have shape (..., V, 3); their leading axes broadcast against the
    footpoint stack. A single footpoint accepts any stack of fields, a stack
    of P footpoints expects fields shaped (P, V, 3).
    """

    def __init__(self, footpoint, params: MetricParams = MetricParams(), faces=None):
        if isinstance(footpoint, TriMesh):
            self.mesh = footpoint
            verts = footpoint.vertices
            faces = footpoint.faces
        else:
            verts = np.asarray(footpoint, dtype=np.float64)
            faces = np.asarray(faces, dtype=np.int64)
            self.mesh = TriMesh(verts, faces) if verts.ndim == 2 else None
        self.params = params
        self.faces = faces
        self.vertices = verts
        self.batch_shape = verts.shape[:-2]
        self.n_vertices = verts.shape[-2]
        self.n_faces = faces.shape[0]
        self._corner = _corner_operator(faces, self.n_vertices)
        self._expanded = {}

        p = self._corners(verts)  # 3 arrays (3, *P, F)
        e1 = p[1] - p[0]
        e2 = p[2] - p[0]
        N = _cross(e1, e2)
        twice_area = np.sqrt(_vdot(N, N))
        areas = 0.5 * twice_area
        _check_stack(areas)
        n = N / twice_area
        dq = np.stack([e1, e2], axis=1)
        g = _mm(_tm(dq), dq)
        ginv = _inverse_metric(g, areas)
        Q, Rf, Rinv = _edge_frame(e1, e2, n, areas)
        cots = np.array([_vdot(p[(i + 1) % 3] - p[i], p[(i + 2) % 3] - p[i]) / twice_area
                         for i in range(3)])
        self._geom = dict(p=np.array(p), dq=dq, g=g, ginv=ginv, R=_mm(dq, ginv), n=n,
                          a=areas, cots=cots, Q=Q, Rf=Rf, Rinv=Rinv)
        self.areas = areas
        self.mass = self._gather(np.broadcast_to(areas / 3.0, (3, 1) + areas.shape))[..., 0]

    # -- layout helpers ---------------------------------------------------
    def _corners(self, x):
        """(..., V, 3) vertex array -> the three corner values, each (3, ..., F)."""
        xt = np.moveaxis(x, -1, 0)
        return [xt[..., self.faces[:, c]] for c in range(3)]

    def _gather(self, corners):
        """Sum per-corner values (3 corners, C, ..., F) onto vertices -> (..., V, C)."""
        corners = np.asarray(corners)
        c = corners.shape[1]
        batch = corners.shape[2:-1]
        nf = self.n_faces
        cols = np.moveaxis(corners, -1, 1).reshape(3 * nf, -1)
        out = (self._corner @ cols).reshape((self.n_vertices, c) + batch)
        return np.moveaxis(np.moveaxis(out, 0, -1), 0, -1)

    def _geometry(self, nbatch):
        """Footpoint arrays with singleton axes so they broadcast over nbatch field axes."""
        extra = nbatch - len(self.batch_shape)
        if extra <= 0:
            return self._geom
        geo = self._expanded.get(extra)
        if geo is None:
            ncomp = {"p": 2, "dq": 2, "g": 2, "ginv": 2, "R": 2, "n": 1, "a": 0, "cots": 1,
                     "Q": 2, "Rf": 2, "Rinv": 2}
            geo = {}
            for key, val in self._geom.items():
                k = ncomp[key]
                geo[key] = val.reshape(val.shape[:k] + (1,) * extra + val.shape[k:])
            self._expanded[extra] = geo
        return geo

    def _check(self, field):
        field = np.asarray(field, dtype=np.float64)
        if field.shape[-2:] != (self.n_vertices, 3):
            raise ConnectivityError(
                f"field shape {field.shape} does not match footpoint with "
                f"{self.n_vertices} vertices"
            )
        return field

    def _field_corners(self, h):
        hc = self._corners(h)
        return hc, np.stack([hc[1] - hc[0], hc[2] - hc[0]], axis=1)

    @staticmethod
    def _oneform_corners(w):
        """Adjoint of the differential, per corner: (3, 2, ...) -> (3 corners, 3, ...)."""
        return np.array([-(w[:, 0] + w[:, 1]), w[:, 0], w[:, 1]])

    def _lap_corners(self, geo, hc):
        cots = geo["cots"]
        out = np.zeros((3,) + np.broadcast_shapes(hc[0].shape, (3,) + cots.shape[1:]))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            d = 0.5 * cots[i] * (hc[k] - hc[j])
            out[j] += d
            out[k] -= d
        return out

    def _laplacian_fields(self, h, hc=None):
        """Unnormalized cotangent Laplacian ``sum_u w_uv (h_u - h_v)`` as (..., V, 3)."""
        if hc is None:
            hc = self._corners(h)
        geo = self._geometry(h.ndim - 2)
        return self._gather(self._lap_corners(geo, hc))

    @staticmethod
    def _parts(geo, dh):
        """Traceless symmetric, trace and skew parts of dh in the face frame.

        The frame is orthonormal, so the parts are plain matrix projections
        and their pairings are Frobenius products. This stays accurate on
        sliver faces where g is badly conditioned.
        """
        C = _mm(_mm(_tm(geo["Q"]), dh), geo["Rinv"])
        Ct = _tm(C)
        trace = 0.5 * _tr(C) * _EYE2.reshape((2, 2) + (1,) * (C.ndim - 2))
        return 0.5 * (C + Ct) - trace, trace, 0.5 * (C - Ct)

    @staticmethod
    def _bend(geo, dh):
        """Normal row of dh in the face frame."""
        return _mv(_tm(geo["Rinv"]), _mv(_tm(dh), geo["n"]))

    def _masses(self, nbatch):
        m = self.mass
        extra = nbatch - len(self.batch_shape)
        return m.reshape((1,) * max(extra, 0) + m.shape)

    # -- public API -------------------------------------------------------
    def laplacian(self, h):
        """Mass-normalized Laplacian of a vertex field."""
        h = self._check(h)
        return self._laplacian_fields(h) / self._masses(h.ndim - 2)[..., None]

    def differential(self, h):
        """Per-face ``dh = [h1 - h0, h2 - h0]`` with shape (..., F, 3, 2)."""
        _, dh = self._field_corners(self._check(h))
        return np.moveaxis(np.moveaxis(dh, 0, -1), 0, -1)

    def split(self, h) -> SplitDifferential:
        h = self._check(h)
        geo = self._geometry(h.ndim - 2)
        _, dh = self._field_corners(h)
        b = _mv(_tm(dh), geo["n"])
        shear, trace, skew = self._parts(geo, dh)

        def user(x):
            return np.moveaxis(np.moveaxis(x, 0, -1), 0, -1)

        def tangent(x):
            return user(_mm(_mm(geo["Q"], x), geo["Rf"]))

        return SplitDifferential(
            shear=tangent(shear),
            stretch=tangent(trace),
            bend=user(_outer(geo["n"], b)),
            skew=tangent(skew),
        )

    def apply(self, h):
        """Riesz representer: returns ``w`` with ``G(h, k) = sum(w * k)``."""
        h = self._check(h)
        p = self.params
        nb = h.ndim - 2
        geo = self._geometry(nb)
        mass = self._masses(nb)[..., None]
        out = p.a0 * mass * h
        hc, dh = self._field_corners(h)
        if p.a1 or p.b1 or p.c1 or p.d1:
            shear, trace, skew = self._parts(geo, dh)
            W = _mm(_mm(geo["Q"], p.a1 * shear + p.b1 * trace + p.d1 * skew), _tm(geo["Rinv"]))
            if p.c1:
                W = W + p.c1 * _outer(geo["n"], _mv(geo["Rinv"], self._bend(geo, dh)))
            out = out + self._gather(self._oneform_corners(W * geo["a"]))
        if p.a2:
            lh = self._gather(self._lap_corners(geo, hc)) / mass
            out = out + p.a2 * self._laplacian_fields(lh)
        return out

    def term_values(self, h, k):
        """Unweighted values of the six terms, last axis ordered like MetricParams."""
        h = self._check(h)
        k = self._check(k)
        h, k = np.broadcast_arrays(h, k)
        return 0.5 * (self._terms(h, k) + self._terms(k, h))

    def _terms(self, h, k):
        nb = h.ndim - 2
        geo = self._geometry(nb)
        hc, dh = self._field_corners(h)
        kc, dk = self._field_corners(k)
        bh, bk = self._bend(geo, dh), self._bend(geo, dk)
        sh, th, kh = self._parts(geo, dh)
        sk, tk, kk = self._parts(geo, dk)
        a = geo["a"]

        def pair(x, y):
            return np.sum(np.sum(x * y, axis=(0, 1)) * a, axis=-1)

        mass = self._masses(nb)
        zeroth = np.sum(np.sum(h * k, axis=-1) * mass, axis=-1)
        normal = np.sum(_vdot(bh, bk) * a, axis=-1)
        lh = self._gather(self._lap_corners(geo, hc))
        lk = self._gather(self._lap_corners(geo, kc))
        second = np.sum(np.sum(lh * lk, axis=-1) / mass, axis=-1)
        return np.stack(
            np.broadcast_arrays(zeroth, pair(sh, sk), pair(th, tk), normal, pair(kh, kk), second),
            axis=-1,
        )

    def inner(self, h, k):
        return self.term_values(h, k) @ self.params.as_array()

    def norm_sq(self, h):
        """``G(h, h)`` through the Riesz map (faster than :meth:`inner`)."""
        h = self._check(h)
        return np.sum(self.apply(h) * h, axis=(-2, -1))

    def vertex_grad(self, h, k):
        """Derivative of ``G_q(h, k)`` with respect to the footpoint vertices.

        ``h`` and ``k`` are held fixed as vertex arrays. Returns (..., V, 3).
        """
        h = self._check(h)
        k = self._check(k)
        h, k = np.broadcast_arrays(h, k)
        if not self.batch_shape and h.ndim == 3:
            step = max(1, _CHUNK_ELEMENTS // (self.n_faces * 40))
            if h.shape[0] > step:
                return np.concatenate([self._vertex_grad(h[s:s + step], k[s:s + step])
                                       for s in range(0, h.shape[0], step)])
        return self._vertex_grad(h, k)

    def _vertex_grad(self, h, k):
        p = self.params
        nb = h.ndim - 2
        geo = self._geometry(nb)
        hc, dh = self._field_corners(h)
        kc, dk = self._field_corners(k)
        a = geo["a"]
        if p.a1 or p.b1 or p.c1 or p.d1:
            d_dq = self._first_order_dq_grad(geo, dh, dk)
        else:
            d_dq = np.zeros((3, 2) + np.broadcast_shapes(dh.shape[2:], a.shape))
        corners = 0.0
        dmass = 0.0
        if p.a0:
            dmass = p.a0 * np.sum(h * k, axis=-1)
        if p.a2:
            mass = self._masses(nb)
            lh = self._gather(self._lap_corners(geo, hc))
            lk = self._gather(self._lap_corners(geo, kc))
            dmass = dmass - p.a2 * np.sum(lh * lk, axis=-1) / mass**2
            zh = self._corners(lh / mass[..., None])
            zk = self._corners(lk / mass[..., None])
            dcot = []
            for i in range(3):
                j, kk = (i + 1) % 3, (i + 2) % 3
                dw = (_vdot(hc[j] - hc[kk], zk[j] - zk[kk])
                      + _vdot(kc[j] - kc[kk], zh[j] - zh[kk]))
                dcot.append(-0.5 * p.a2 * dw)
            corners = corners + self._cot_backprop(geo, dcot)
        if p.a0 or p.a2:
            dm = np.moveaxis(dmass, -1, 0)[self.faces.T]  # (3, F, ...)
            darea = np.moveaxis(dm.sum(axis=0), 0, -1) / 3.0
            # d(area)/d(dq) = area * dq g^{-1}
            d_dq = d_dq + (darea * a) * geo["R"]
        corners = corners + self._oneform_corners(d_dq)
        return self._gather(corners)

    @staticmethod
    def _cot_backprop(geo, dcot):
        """Chain per-corner cotangent sensitivities to corner positions."""
        pos, n, cots = geo["p"], geo["n"], geo["cots"]
        twice_area = 2.0 * geo["a"]
        out = [0.0, 0.0, 0.0]
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            a = pos[j] - pos[i]
            b = pos[k] - pos[i]
            s = dcot[i] / twice_area
            ga = s * (b - cots[i] * _cross(b, n))
            gb = s * (a - cots[i] * _cross(n, a))
            out[j] = out[j] + ga
            out[k] = out[k] + gb
            out[i] = out[i] - (ga + gb)
        return np.array(np.broadcast_arrays(*out))

    def _first_order_dq_grad(self, geo, dh, dk):
        """Reverse-mode derivative of ``area * Q(dh, dk)`` with respect to ``dq``.

        ``Q = cY Y + cX2 tr(Ah Ak) + cX3 tr(Ah) tr(Ak) + cB b_h g^-1 b_k`` with
        ``Y = tr(g^-1 dh^T dk)``, which is the same bilinear form as the
        shear/stretch/bend/skew split.
        """
        p = self.params
        cY = 0.5 * (p.a1 + p.d1)
        cX2 = 0.5 * (p.a1 - p.d1)
        cX3 = 0.5 * (p.b1 - p.a1)
        cB = p.c1 - cY
        D, Gi, R, a, n = geo["dq"], geo["ginv"], geo["R"], geo["a"], geo["n"]
        Rt = _tm(R)
        Ah, Ak = _mm(Rt, dh), _mm(Rt, dk)
        bh, bk = _mv(_tm(dh), n), _mv(_tm(dk), n)
        trAh, trAk = _tr(Ah), _tr(Ak)
        dhT_dk = _mm(_tm(dh), dk)
        Gib_k = _mv(Gi, bk)
        Gib_h = _mv(Gi, bh)
        Q = (cY * _trprod(Gi, dhT_dk) + cX2 * _trprod(Ah, Ak) + cX3 * trAh * trAk
             + cB * _vdot(bh, Gib_k))

        # partial derivative with respect to g^{-1}
        DT_dh = _mm(_tm(D), dh)
        DT_dk = _mm(_tm(D), dk)
        phi = (cY * _tm(dhT_dk)
               + cX2 * (_tm(_mm(DT_dh, Ak)) + _tm(_mm(DT_dk, Ah)))
               + cX3 * (trAk * _tm(DT_dh) + trAh * _tm(DT_dk))
               + cB * _outer(bh, bk))
        gam = -_mm(_mm(Gi, phi), Gi)
        grad = _mm(D, gam + _tm(gam))
        # explicit dependence through dq^T in A
        grad = grad + _mm(cX2 * (_mm(dh, Ak) + _mm(dk, Ah)) + cX3 * (trAk * dh + trAh * dk), Gi)
        # dependence through the unit normal
        dn = cB * (_mv(dh, Gib_k) + _mv(dk, Gib_h))
        dN = (dn - n * _vdot(n, dn)) / (2 * a)
        grad = grad + np.stack([_cross(D[:, 1], dN), _cross(dN, D[:, 0])], axis=1)
        # area = sqrt(det g) / 2 has d(area)/d(dq) = area * dq g^{-1}
        return a * grad + (Q * a) * R


def _check_stack(areas):
    bad = ~(areas > DEGENERATE_AREA)
    if bad.any():
        idx = np.argwhere(bad)[0]
        time_index = int(idx[0]) if areas.ndim > 1 else None
        check_faces(areas[tuple(idx[:-1])], time_index=time_index)


def _inverse_metric(g, areas):
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ginv = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det
    near = areas < NEAR_DEGENERATE_AREA
    if near.any():
        gn = np.moveaxis(g[:, :, near], -1, 0)
        w, U = np.linalg.eigh(gn)
        winv = np.where(w > PINV_CUTOFF, 1.0 / np.where(w > PINV_CUTOFF, w, 1.0), 0.0)
        ginv[:, :, near] = np.moveaxis(np.einsum("fij,fj,fkj->fik", U, winv, U), 0, -1)
    return ginv


def _edge_frame(e1, e2, n, areas):
    """Orthonormal tangent frame Q and triangular factor of the edges, dq = Q Rf.

    Returns Q, Rf and Rinv. On near-degenerate faces Rinv is the
    pseudo-inverse of Rf with the same cutoff as the inverse metric, so that
    ``Rinv Rinv^T`` equals the inverse metric there as well.
    """
    r11 = np.sqrt(_vdot(e1, e1))
    q1 = e1 / r11
    q2 = _cross(n, q1)
    r12 = _vdot(q1, e2)
    r22 = _vdot(q2, e2)
    zero = np.zeros_like(r11)
    Q = np.stack([q1, q2], axis=1)
    Rf = np.array([[r11, r12], [zero, r22]])
    Rinv = np.array([[1.0 / r11, -r12 / (r11 * r22)], [zero, 1.0 / r22]])
    near = areas < NEAR_DEGENERATE_AREA
    if near.any():
        U, s, Vt = np.linalg.svd(np.moveaxis(Rf[:, :, near], -1, 0))
        cut = np.sqrt(PINV_CUTOFF)
        sinv = np.where(s > cut, 1.0 / np.where(s > cut, s, 1.0), 0.0)
        Rinv[:, :, near] = np.moveaxis(np.einsum("fji,fj,fkj->fik", Vt, sinv, U), 0, -1)
    return Q, Rf, Rinv


# ---------------------------------------------------------------------------
# functional interface


def split_differential(mesh: TriMesh, h) -> SplitDifferential:
    return FootpointMetric(mesh, MetricParams(1, 1, 1, 1, 1, 1)).split(h)


def h2_inner(mesh: TriMesh, h, k, params: MetricParams = MetricParams()):
    """Split H2 inner product ``G_mesh(h, k)``; broadcasts over leading axes."""
    return FootpointMetric(mesh, params).inner(h, k)


def h2_vertex_grad(mesh: TriMesh, h, k, params: MetricParams = MetricParams()):
    """Gradient of ``G_q(h, k)`` with respect to the vertex positions of ``q``."""
    return FootpointMetric(mesh, params).vertex_grad(h, k)


def h2_inner_footpoint_grad(mesh_fn, theta, h, k, params=MetricParams(), jacobian=None):
    """Gradient of ``theta -> G_{mesh_fn(theta)}(h, k)``.

    Parameters
    ----------
    mesh_fn : callable
        Maps the parameter vector to a :class:`TriMesh`.
    jacobian : callable
        ``jacobian(theta)`` returns the (3V, P) derivative of the flattened
        vertex array with respect to ``theta``.
    """
    if jacobian is None:
        raise TypeError("jacobian is required to chain the vertex gradient to theta")
    theta = np.asarray(theta, dtype=np.float64)
    mesh = mesh_fn(theta)
    gv = h2_vertex_grad(mesh, h, k, params)
    J = np.asarray(jacobian(theta))
    return J.T @ gv.reshape(-1)

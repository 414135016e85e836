"""Basis-restricted latent model.

A code ``alpha`` (pose block first, then shape block) decodes to the mesh
with vertices ``template + sum_j alpha_j b_j``. The metric on codes is the
pullback ``Gbar_alpha(beta, eta) = G_{F(alpha)}(B beta, B eta)``, and a
discrete path ``alpha_0, ..., alpha_T`` has energy

    E = T * sum_t Gbar_{alpha_t}(alpha_{t+1} - alpha_t, alpha_{t+1} - alpha_t)

with the footpoint at the left end of each segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, RankDeficiencyError
from .mesh import TriMesh
from .metric import FootpointMetric, MetricParams


class Basis:
    """Template mesh plus pose and shape deformation fields.

    Parameters
    ----------
    template : TriMesh
    pose_fields : array_like, shape (n, V, 3)
    shape_fields : array_like, shape (m, V, 3)
    """

    def __init__(self, template: TriMesh, pose_fields, shape_fields):
        V = template.n_vertices
        pose = np.asarray(pose_fields, dtype=np.float64).reshape(-1, V, 3)
        shape = np.asarray(shape_fields, dtype=np.float64).reshape(-1, V, 3)
        if pose.size == 0 and shape.size == 0:
            raise DimensionError("basis needs at least one field")
        self.template = template
        self.pose_fields = pose
        self.shape_fields = shape
        self.fields = np.concatenate([pose, shape])
        for arr in (self.pose_fields, self.shape_fields, self.fields):
            arr.flags.writeable = False
        # (3V, d) matrix whose columns are the flattened fields
        self.matrix = self.fields.reshape(self.dim, -1).T

    @property
    def n(self):
        return self.pose_fields.shape[0]

    @property
    def m(self):
        return self.shape_fields.shape[0]

    @property
    def dim(self):
        return self.fields.shape[0]

    @property
    def faces(self):
        return self.template.faces

    def __repr__(self):
        return f"Basis(V={self.template.n_vertices}, n={self.n}, m={self.m})"

    def _code(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape[-1:] != (self.dim,):
            raise DimensionError(f"code has shape {alpha.shape}, basis dimension is {self.dim}")
        return alpha

    def field(self, beta):
        """Vertex field ``B beta``; broadcasts over leading axes of ``beta``."""
        beta = self._code(beta)
        return np.tensordot(beta, self.fields, axes=(-1, 0))

    def decode_vertices(self, alpha):
        return self.template.vertices + self.field(alpha)

    def decode(self, alpha) -> TriMesh:
        return TriMesh(self.decode_vertices(alpha), self.template.faces)

    def project(self, field):
        """Coefficients of the flat least-squares projection of a vertex field."""
        coef, *_ = np.linalg.lstsq(self.matrix, np.asarray(field, dtype=np.float64).reshape(-1),
                                   rcond=None)
        return coef

    def split(self, alpha):
        alpha = self._code(alpha)
        return alpha[..., : self.n], alpha[..., self.n:]

    def join(self, pose, shape):
        return self._code(np.concatenate([np.asarray(pose, float), np.asarray(shape, float)], -1))

    def check_independence(self, rtol=1e-10):
        """Raise :class:`RankDeficiencyError` if the fields are linearly dependent.

        Returns the eigenvalues of the normalized flat Gram matrix.
        """
        X = self.fields.reshape(self.dim, -1)
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            idx = np.flatnonzero(norms == 0)
            raise RankDeficiencyError(f"basis fields {idx.tolist()} are zero",
                                      pairs=[(int(i), int(i)) for i in idx])
        Xn = X / norms[:, None]
        gram = Xn @ Xn.T
        eig = np.linalg.eigvalsh(gram)
        if eig[0] <= rtol * self.dim:
            pairs = _near_dependent_pairs(gram)
            raise RankDeficiencyError(
                f"basis Gram matrix is rank deficient (smallest eigenvalue {eig[0]:.3e})",
                pairs=pairs,
            )
        return eig


def _near_dependent_pairs(gram, cos_tol=1 - 1e-6):
    """Index pairs whose normalized fields are almost parallel."""
    iu = np.triu_indices(gram.shape[0], 1)
    cos = np.abs(gram[iu])
    hit = cos >= cos_tol
    if not hit.any():
        # no single collinear pair; report the most aligned one
        k = int(np.argmax(cos))
        return [(int(iu[0][k]), int(iu[1][k]))]
    return [(int(i), int(j)) for i, j in zip(iu[0][hit], iu[1][hit])]


@dataclass
class LatentCode:
    """A single code split into its pose and shape blocks."""

    pose: np.ndarray
    shape: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.pose, self.shape])

    def __array__(self, dtype=None, copy=None):
        v = self.vector
        return v if dtype is None else v.astype(dtype)

    @classmethod
    def from_vector(cls, alpha, n):
        alpha = np.asarray(alpha, dtype=np.float64)
        return cls(alpha[:n].copy(), alpha[n:].copy())

    def to_json(self):
        return {"pose": self.pose.tolist(), "shape": self.shape.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["pose"], dtype=np.float64),
                   np.asarray(obj["shape"], dtype=np.float64))


@dataclass
class LatentPath:
    """Codes at times ``0, 1/T, ..., 1``; ``codes`` has shape (T + 1, n + m)."""

    codes: np.ndarray
    n: int

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        if self.codes.ndim != 2 or self.codes.shape[0] < 2:
            raise DimensionError(f"a path needs at least two codes, got shape {self.codes.shape}")
        if not 0 <= self.n <= self.codes.shape[1]:
            raise DimensionError(f"pose block size {self.n} exceeds code length")

    @property
    def T(self):
        return self.codes.shape[0] - 1

    @property
    def pose(self):
        return self.codes[:, : self.n]

    @property
    def shape(self):
        return self.codes[:, self.n:]

    def __array__(self, dtype=None, copy=None):
        return self.codes if dtype is None else self.codes.astype(dtype)

    def __len__(self):
        return self.codes.shape[0]

    def __getitem__(self, t):
        return self.codes[t]

    def initial_velocity(self):
        """Time-one velocity ``T (alpha_1 - alpha_0)``."""
        return self.T * (self.codes[1] - self.codes[0])

    def reversed(self):
        return LatentPath(self.codes[::-1].copy(), self.n)

    def to_json(self):
        return {"n": self.n, "T": self.T, "codes": self.codes.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["codes"], dtype=np.float64), int(obj["n"]))

    def dumps(self):
        return json.dumps(self.to_json())


def decode(basis: Basis, alpha) -> TriMesh:
    return basis.decode(alpha)


def pullback_inner(basis: Basis, alpha, beta, eta, params: MetricParams = MetricParams()):
    """``G_{F(alpha)}(B beta, B eta)``."""
    metric = FootpointMetric(basis.decode_vertices(alpha), params, basis.faces)
    return metric.inner(basis.field(beta), basis.field(eta))


def pullback_gram(basis: Basis, alpha, params: MetricParams = MetricParams()):
    """Matrix of the pullback metric at ``alpha`` in the basis, shape (d, d)."""
    metric = FootpointMetric(basis.decode_vertices(alpha), params, basis.faces)
    W = metric.apply(basis.fields)
    M = W.reshape(basis.dim, -1) @ basis.matrix
    return 0.5 * (M + M.T)


def pullback_footpoint_grad(basis: Basis, alpha, beta, params: MetricParams = MetricParams()):
    """Gradient of ``alpha -> Gbar_alpha(beta, beta)``."""
    metric = FootpointMetric(basis.decode_vertices(alpha), params, basis.faces)
    h = basis.field(beta)
    return basis.matrix.T @ metric.vertex_grad(h, h).reshape(-1)


def path_energy(basis: Basis, path, params: MetricParams = MetricParams(), free=None,
                with_grad=True):
    """Discrete path energy and its gradient.

    Parameters
    ----------
    path : LatentPath or array_like, shape (T + 1, d)
    free : array_like of bool, shape (T + 1,), optional
        Codes to differentiate; defaults to all. Gradient rows of fixed codes
        are zero.

    Returns
    -------
    energy : float
    grad : ndarray, shape (T + 1, d)
        Only when ``with_grad``.
    """
    codes = basis._code(np.asarray(path, dtype=np.float64))
    if codes.ndim != 2 or codes.shape[0] < 2:
        raise DimensionError(f"path must have shape (T + 1, d), got {codes.shape}")
    T = codes.shape[0] - 1
    metric = FootpointMetric(basis.decode_vertices(codes[:-1]), params, basis.faces)
    delta = np.diff(codes, axis=0)
    h = basis.field(delta)
    w = metric.apply(h)
    energy = T * float(np.sum(w * h))
    if not with_grad:
        return energy
    bw = w.reshape(T, -1) @ basis.matrix
    fp = metric.vertex_grad(h, h).reshape(T, -1) @ basis.matrix
    grad = np.zeros_like(codes)
    grad[:-1] += fp - 2.0 * bw
    grad[1:] += 2.0 * bw
    grad *= T
    if free is not None:
        free = np.asarray(free, dtype=bool)
        grad[~free] = 0.0
    return energy, grad


def linear_interpolate(alpha0, alpha1, T: int, n: int | None = None) -> LatentPath:
    """Straight line in code space sampled at ``T + 1`` evenly spaced times."""
    a0 = np.asarray(alpha0, dtype=np.float64)
    a1 = np.asarray(alpha1, dtype=np.float64)
    if a0.shape != a1.shape or a0.ndim != 1:
        raise DimensionError(f"endpoint shapes {a0.shape} and {a1.shape} do not match")
    if int(T) < 1:
        raise ValueError("T must be at least 1")
    t = np.arange(T + 1)[:, None] / T
    codes = a0 + t * (a1 - a0)
    codes[-1] = a1
    return LatentPath(codes, a0.shape[0] if n is None else n)

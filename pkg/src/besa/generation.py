"""Motion transfer and random shape generation from latent velocities."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from .errors import DimensionError, SolverError
from .geodesics import solve_ivp
from .latent import Basis, LatentPath
from .metric import MetricParams

COV_FLOOR = 1e-8


def transfer_motion(path, target_shape) -> LatentPath:
    """Replace the shape block of every code by ``target_shape``.

    Pose blocks are copied bit for bit.
    """
    if not isinstance(path, LatentPath):
        raise TypeError("transfer_motion expects a LatentPath")
    target = np.asarray(target_shape, dtype=np.float64).ravel()
    m = path.codes.shape[1] - path.n
    if target.shape != (m,):
        raise DimensionError(f"target shape block has length {target.size}, expected {m}")
    codes = path.codes.copy()
    codes[:, path.n:] = target
    return LatentPath(codes, path.n)


def velocity_samples(paths):
    """Time-one initial velocities of paths, split into (pose, shape) arrays."""
    vel = np.array([p.initial_velocity() for p in paths])
    n = paths[0].n
    return vel[:, :n], vel[:, n:]


@dataclass
class GMMModel:
    """Gaussian mixture with full covariances."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        K, D = self.means.shape
        self.covariances = np.asarray(self.covariances, dtype=np.float64).reshape(K, D, D)
        if self.weights.shape != (K,):
            raise DimensionError("weights and means disagree on the component count")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to one")
        if not np.allclose(self.covariances, np.swapaxes(self.covariances, 1, 2), atol=0):
            raise ValueError("covariances must be symmetric")
        low = np.linalg.eigvalsh(self.covariances).min()
        if low < COV_FLOOR * (1 - 1e-6):
            raise ValueError(f"covariance eigenvalue {low:.3e} is below the floor {COV_FLOOR}")

    @property
    def K(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def component_log_pdf(self, X):
        """(N, K) log densities of each component."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty((X.shape[0], self.K))
        for k in range(self.K):
            L = np.linalg.cholesky(self.covariances[k])
            z = np.linalg.solve(L, (X - self.means[k]).T)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            out[:, k] = -0.5 * (np.sum(z * z, axis=0) + logdet + self.dim * np.log(2 * np.pi))
        return out

    def log_likelihood(self, X):
        """Total log-likelihood of the samples."""
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return float(np.sum(logsumexp(self.component_log_pdf(X) + logw, axis=1)))

    def sample(self, rng, size=None):
        """Draw from the mixture with a ``numpy.random.Generator``."""
        n = 1 if size is None else int(size)
        comps = rng.choice(self.K, size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for i, k in enumerate(comps):
            L = np.linalg.cholesky(self.covariances[k])
            out[i] = self.means[k] + L @ eps[i]
        return out[0] if size is None else out

    def to_json(self):
        return {
            "K": self.K,
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.reshape(self.K, -1).tolist(),
            "log_likelihood_history": list(self.log_likelihood_history),
        }

    @classmethod
    def from_json(cls, obj):
        K, D = int(obj["K"]), int(obj["dim"])
        return cls(
            np.asarray(obj["weights"], dtype=np.float64),
            np.asarray(obj["means"], dtype=np.float64).reshape(K, D),
            np.asarray(obj["covariances"], dtype=np.float64).reshape(K, D, D),
            list(obj.get("log_likelihood_history", [])),
        )

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _floored_covariance(S, floor):
    """Closest covariance to the scatter ``S`` with eigenvalues at least ``floor``.

    Clipping the eigenvalues of the weighted scatter is the maximizer of the
    Gaussian likelihood under that constraint, so EM stays monotone.
    """
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    C = (U * np.maximum(w, floor)) @ U.T
    return 0.5 * (C + C.T)


def fit_gmm(samples, K: int, seed: int = 0, max_iter: int = 500, rtol: float = 1e-8,
            floor: float = COV_FLOOR) -> GMMModel:
    """Fit a full-covariance Gaussian mixture by EM.

    Means start at k-means++ seeds; the first responsibilities are the hard
    nearest-seed assignment. Iterations stop when the relative improvement of
    the log-likelihood drops below ``rtol`` or after ``max_iter``.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimensionError("samples must be a (N, D) array with D >= 1")
    N, D = X.shape
    if K < 1 or N < K:
        raise ValueError(f"need at least K = {K} samples, got {N}")
    if N > 1 and np.all(X == X[0]):
        raise ValueError("all samples are identical; the mixture is degenerate")

    centers, _ = kmeans_plusplus(X, K, random_state=seed)
    d2 = ((X[:, None, :] - centers[None]) ** 2).sum(-1)
    resp = np.zeros((N, K))
    resp[np.arange(N), np.argmin(d2, axis=1)] = 1.0

    weights = np.full(K, 1.0 / K)
    means = centers.copy()
    covs = np.array([np.eye(D)] * K)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # M step
        Nk = resp.sum(axis=0)
        for k in range(K):
            if Nk[k] <= 0:
                continue
            means[k] = resp[:, k] @ X / Nk[k]
            diff = X - means[k]
            covs[k] = _floored_covariance((resp[:, k, None] * diff).T @ diff / Nk[k], floor)
        weights = Nk / N
        weights /= weights.sum()
        # E step
        model = GMMModel(weights, means.copy(), covs.copy())
        with np.errstate(divide="ignore"):
            logp = model.component_log_pdf(X) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(np.sum(norm))
        resp = np.exp(logp - norm[:, None])
        if history and abs(ll - history[-1]) <= rtol * abs(history[-1]):
            history.append(ll)
            converged = True
            break
        history.append(ll)
    model = GMMModel(weights, means, covs, history, it, converged)
    return model


def zero_gmm(dim: int) -> GMMModel:
    """Single component at the origin with the floor covariance."""
    return GMMModel(np.ones(1), np.zeros((1, dim)), COV_FLOOR * np.eye(dim)[None])


def sample_shape(basis: Basis, gmm_pose: GMMModel, gmm_shape: GMMModel, N: int = 10,
                 params: MetricParams = MetricParams(), seed: int = 0, return_velocity=False):
    """Random shape: endpoint of the geodesic from the template with a sampled velocity."""
    if gmm_pose.dim != basis.n or gmm_shape.dim != basis.m:
        raise DimensionError(
            f"models have dimensions ({gmm_pose.dim}, {gmm_shape.dim}), "
            f"basis has (n, m) = ({basis.n}, {basis.m})"
        )
    rng = np.random.default_rng(seed)
    beta = np.concatenate([gmm_pose.sample(rng), gmm_shape.sample(rng)])
    try:
        path = solve_ivp(basis, np.zeros(basis.dim), beta, N, params)
    except SolverError as exc:
        exc.extra["beta"] = beta
        raise
    mesh = basis.decode(path.codes[-1])
    return (mesh, beta) if return_velocity else mesh

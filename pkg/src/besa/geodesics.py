"""Geodesic boundary and initial value problems in the latent space.

Boundary problems are relaxed: the endpoint codes are free and pulled
towards the target surfaces by varifold data terms whose weight grows, and
whose kernel width shrinks, over a sequence of stages. Initial value
problems are integrated one step at a time by solving the discrete
Euler-Lagrange equation of the path energy for the next code.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .discrepancy import VarifoldTarget
from .errors import DimensionError, SolverError
from .latent import Basis, LatentPath, linear_interpolate, path_energy, pullback_gram
from .mesh import TriMesh
from .metric import FootpointMetric, MetricParams
from .optimize import OptimizerReport, minimize

_LBFGS_MEMORY = 20


@dataclass(frozen=True)
class ScheduleConfig:
    """Multiresolution schedule for the relaxed boundary problems.

    ``stages`` holds ``(lam, sigma)`` pairs with ``lam`` nondecreasing and
    ``sigma`` nonincreasing.
    """

    stages: tuple = ()
    T: int = 10
    max_iter: int = 500
    grad_tol: float = 1e-6

    def __post_init__(self):
        stages = tuple((float(lam), float(sig)) for lam, sig in self.stages)
        if not stages:
            stages = self.geometric().stages
        object.__setattr__(self, "stages", stages)
        lams = np.array([s[0] for s in stages])
        sigs = np.array([s[1] for s in stages])
        if np.any(lams <= 0) or np.any(sigs <= 0):
            raise ValueError("schedule weights and kernel widths must be positive")
        if np.any(np.diff(lams) < 0) or np.any(np.diff(sigs) > 0):
            raise ValueError("lambda must be nondecreasing and sigma nonincreasing across stages")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.max_iter < 1 or not self.grad_tol > 0:
            raise ValueError("max_iter must be positive and grad_tol > 0")

    @classmethod
    def geometric(cls, sigma=(0.4, 0.025), lam=(1e2, 1e8), n_stages=5, **kwargs):
        """Stages spaced geometrically between the given endpoints."""
        if n_stages < 1:
            raise ValueError("need at least one stage")
        sig = np.geomspace(sigma[0], sigma[1], n_stages)
        lams = np.geomspace(lam[0], lam[1], n_stages)
        return cls(stages=tuple(zip(lams.tolist(), sig.tolist())), **kwargs)

    def to_dict(self):
        return {"stages": [list(s) for s in self.stages], "T": self.T,
                "max_iter": self.max_iter, "grad_tol": self.grad_tol}


class _VelocityCoordinates:
    """Linear change of variables for path optimization.

    Codes are first written in whitened per-step velocities: with
    ``Gbar_0 = U diag(w) U^T`` and ``M = U diag(w)^(-1/2)``, step ``t`` of the
    path is ``alpha_{t+1} - alpha_t = M z_t / sqrt(T)``, so the path energy is
    close to ``sum |z_t|^2`` near the template. A free first code is stored
    as ``z_start`` with ``alpha_0 = M z_start``. On top of that the optimizer
    variable is ``y = P^{-1} z`` where ``P`` is an inverse square root of a
    quadratic model of the whole objective (see :meth:`precondition`). The
    minimizer is unchanged; only the conditioning seen by L-BFGS improves.
    """

    def __init__(self, basis, params, T, free_start):
        G = pullback_gram(basis, np.zeros(basis.dim), params)
        w, U = np.linalg.eigh(G)
        w = np.maximum(w, 1e-12 * max(w[-1], 1e-300))
        self.M = U / np.sqrt(w)
        self.Minv = (U * np.sqrt(w)).T
        self.T = T
        self.d = basis.dim
        self.free_start = free_start
        self.P = None
        self.Pinv = None

    @property
    def size(self):
        return (self.T + self.free_start) * self.d

    def endpoint_maps(self):
        """Matrices mapping ``z`` to the whitened first and last codes."""
        d, T = self.d, self.T
        E_last = np.zeros((d, self.size))
        off = 0
        E_first = None
        if self.free_start:
            E_first = np.zeros((d, self.size))
            E_first[:, :d] = np.eye(d)
            E_last[:, :d] = np.eye(d)
            off = d
        for t in range(T):
            E_last[:, off + t * d: off + (t + 1) * d] = np.eye(d) / np.sqrt(T)
        return E_first, E_last

    def precondition(self, h_first=None, h_last=None, floor=1e-6):
        """Use ``2 I + sum E^T H E`` over the data terms as the model Hessian in ``z``.

        ``h_first`` and ``h_last`` are data-term Hessians in whitened code
        units. The energy contributes ``2 I`` on the step variables only.
        """
        H = np.zeros((self.size, self.size))
        off = self.d if self.free_start else 0
        H[off:, off:] += 2.0 * np.eye(self.size - off)
        E_first, E_last = self.endpoint_maps()
        if h_first is not None:
            H += E_first.T @ h_first @ E_first
        if h_last is not None:
            H += E_last.T @ h_last @ E_last
        mu, V = np.linalg.eigh(0.5 * (H + H.T))
        mu = np.abs(mu)
        mu = np.maximum(mu, floor * mu.max())
        self.P = (V / np.sqrt(mu)) @ V.T
        self.Pinv = (V * np.sqrt(mu)) @ V.T

    def _z(self, y):
        return y if self.P is None else self.P @ y

    def codes(self, y, start=None):
        z = self._z(np.asarray(y, dtype=np.float64).ravel()).reshape(-1, self.d)
        if self.free_start:
            start, z = self.M @ z[0], z[1:]
        steps = (z @ self.M.T) / np.sqrt(self.T)
        return np.vstack([start, start + np.cumsum(steps, axis=0)])

    def pullback(self, grad):
        """Gradient with respect to ``y`` from the gradient over all codes."""
        tail = np.cumsum(grad[::-1], axis=0)[::-1]  # tail[s] = sum_{t >= s} grad_t
        gz = (tail[1:] @ self.M) / np.sqrt(self.T)
        if self.free_start:
            gz = np.vstack([tail[0] @ self.M, gz])
        gz = gz.ravel()
        return gz if self.P is None else self.P.T @ gz

    def encode(self, codes):
        steps = np.diff(codes, axis=0) * np.sqrt(self.T)
        z = steps @ self.Minv.T
        if self.free_start:
            z = np.vstack([self.Minv @ codes[0], z])
        z = z.ravel()
        return z if self.Pinv is None else self.Pinv @ z


def _data_hessian_w(basis, target, alpha, sigma, M, step=1e-4):
    """Forward-difference Hessian of a varifold data term in whitened code units."""
    faces = basis.faces

    def grad(a):
        vg = target.value_and_grad(basis.decode_vertices(a), faces, sigma)[1]
        return M.T @ (basis.matrix.T @ vg.reshape(-1))

    g0 = grad(alpha)
    cols = [(grad(alpha + step * M[:, j]) - g0) / step for j in range(M.shape[1])]
    H = np.array(cols).T
    return 0.5 * (H + H.T)


def _run_schedule(objective_for_stage, x0, sched: ScheduleConfig, before_stage=None):
    """Run the stages in order, warm-starting each from the previous result.

    ``before_stage(lam, sigma, x)``, if given, may return a re-encoded ``x``
    (used when the change of variables depends on the stage).
    """
    report = OptimizerReport()
    start = time.perf_counter()
    x = np.asarray(x0, dtype=np.float64).ravel().copy()
    for lam, sigma in sched.stages:
        if before_stage is not None:
            x = before_stage(lam, sigma, x)
        fun = objective_for_stage(lam, sigma)
        x_new, stage = minimize(fun, x, max_iter=sched.max_iter, grad_tol=sched.grad_tol,
                                memory=_LBFGS_MEMORY)
        stage.params = {"lambda": lam, "sigma": sigma}
        report.stages.append(stage)
        if stage.failed:
            # keep the result of the last completed stage
            break
        x = x_new
    report.wall_time = time.perf_counter() - start
    return x, report


def solve_bvp(basis: Basis, q0: TriMesh, q1: TriMesh, params: MetricParams = MetricParams(),
              sched: ScheduleConfig = ScheduleConfig(), init=None):
    """Relaxed geodesic between two meshes of arbitrary connectivity.

    Minimizes the path energy plus ``lam`` times the squared varifold
    distances of both decoded endpoints to ``q0`` and ``q1``, over all codes
    of a path with ``sched.T`` steps, starting from the zero path.

    Returns
    -------
    path : LatentPath
    report : OptimizerReport
    """
    T, d = sched.T, basis.dim
    targets = (VarifoldTarget(q0), VarifoldTarget(q1))
    faces = basis.faces
    init = np.zeros((T + 1, d)) if init is None else np.asarray(init, dtype=np.float64)
    if init.shape != (T + 1, d):
        raise DimensionError(f"initial path has shape {init.shape}, expected {(T + 1, d)}")
    coords = _VelocityCoordinates(basis, params, T, free_start=True)

    def for_stage(lam, sigma):
        def fun(y):
            codes = coords.codes(y)
            energy, grad = path_energy(basis, codes, params)
            for idx, target in zip((0, T), targets):
                val, vg = target.value_and_grad(basis.decode_vertices(codes[idx]), faces, sigma)
                energy += lam * val
                grad[idx] += lam * (basis.matrix.T @ vg.reshape(-1))
            return energy, coords.pullback(grad)
        return fun

    def before_stage(lam, sigma, y):
        codes = coords.codes(y)
        h0, h1 = (lam * _data_hessian_w(basis, tg, codes[idx], sigma, coords.M)
                  for idx, tg in zip((0, T), targets))
        coords.precondition(h0, h1)
        return coords.encode(codes)

    y, report = _run_schedule(for_stage, coords.encode(init), sched, before_stage)
    return LatentPath(coords.codes(y), basis.n), report


def retrieve_latent(basis: Basis, q_target: TriMesh, params: MetricParams = MetricParams(),
                    sched: ScheduleConfig = ScheduleConfig(), return_path=False):
    """Latent code of a scan: one-sided relaxed geodesic from the template.

    The first code is fixed at zero and only the last code carries a data
    term. Returns ``(code, decoded_mesh, report)``, plus the path when
    ``return_path``.
    """
    T, d = sched.T, basis.dim
    target = VarifoldTarget(q_target)
    faces = basis.faces
    coords = _VelocityCoordinates(basis, params, T, free_start=False)
    zero = np.zeros(d)

    def for_stage(lam, sigma):
        def fun(y):
            codes = coords.codes(y, zero)
            energy, grad = path_energy(basis, codes, params)
            val, vg = target.value_and_grad(basis.decode_vertices(codes[T]), faces, sigma)
            energy += lam * val
            grad[T] += lam * (basis.matrix.T @ vg.reshape(-1))
            grad[0] = 0.0
            return energy, coords.pullback(grad)
        return fun

    def before_stage(lam, sigma, y):
        codes = coords.codes(y, zero)
        coords.precondition(None, lam * _data_hessian_w(basis, target, codes[T], sigma, coords.M))
        return coords.encode(codes)

    y, report = _run_schedule(for_stage, np.zeros(T * d), sched, before_stage)
    path = LatentPath(coords.codes(y, zero), basis.n)
    code = path.codes[-1].copy()
    out = (code, basis.decode(code), report)
    return out + (path,) if return_path else out


def geodesic_between_codes(basis: Basis, alpha0, alpha1, params: MetricParams = MetricParams(),
                           T=10, max_iter=500, grad_tol=1e-9, init=None):
    """Discrete geodesic with both end codes fixed.

    Starts from the straight line unless ``init`` (a full path) is given.
    """
    a0 = basis._code(alpha0)
    a1 = basis._code(alpha1)
    d = basis.dim
    if init is None:
        init = linear_interpolate(a0, a1, T).codes
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (T + 1, d):
        raise DimensionError(f"initial path has shape {init.shape}, expected {(T + 1, d)}")
    if T == 1:
        return LatentPath(np.vstack([a0, a1]), basis.n), OptimizerReport()

    # Near the template the energy over interior codes has Hessian
    # 2 T (D kron Gbar_0) with D the second-difference matrix; optimize in
    # coordinates where that Hessian is the identity.
    G = pullback_gram(basis, np.zeros(d), params)
    w, U = np.linalg.eigh(G)
    M = U / np.sqrt(np.maximum(w, 1e-12 * max(w[-1], 1e-300)))
    D = 2 * np.eye(T - 1) - np.eye(T - 1, k=1) - np.eye(T - 1, k=-1)
    lam, Q = np.linalg.eigh(D)
    P = Q / np.sqrt(2 * T * lam)
    base = init[1:-1]

    def interior(y):
        return base + P @ y.reshape(T - 1, d) @ M.T

    def fun(y):
        codes = np.vstack([a0, interior(y), a1])
        energy, grad = path_energy(basis, codes, params)
        return energy, (P.T @ grad[1:-1] @ M).ravel()

    start = time.perf_counter()
    y, stage = minimize(fun, np.zeros((T - 1) * d), max_iter=max_iter, grad_tol=grad_tol,
                        memory=_LBFGS_MEMORY)
    report = OptimizerReport(stages=[stage], wall_time=time.perf_counter() - start)
    return LatentPath(np.vstack([a0, interior(y), a1]), basis.n), report


class _StepSystem:
    """Residual and Jacobian of the one-step shooting equation."""

    def __init__(self, basis, alpha0, alpha1, params):
        self.basis = basis
        self.alpha1 = alpha1
        G0 = pullback_gram(basis, alpha0, params)
        self.metric1 = FootpointMetric(basis.decode_vertices(alpha1), params, basis.faces)
        W = self.metric1.apply(basis.fields)
        G1 = W.reshape(basis.dim, -1) @ basis.matrix
        self.G1 = 0.5 * (G1 + G1.T)
        self.rhs = 2.0 * G0 @ (alpha1 - alpha0)

    def residual(self, beta):
        h = self.basis.field(beta)
        fp = self.basis.matrix.T @ self.metric1.vertex_grad(h, h).reshape(-1)
        return self.rhs - 2.0 * self.G1 @ beta + fp

    def jacobian(self, beta):
        h = self.basis.field(beta)
        vg = self.metric1.vertex_grad(self.basis.fields, h)
        return -2.0 * self.G1 + 2.0 * self.basis.matrix.T @ vg.reshape(self.basis.dim, -1).T


def ivp_step(basis: Basis, alpha0, alpha1, params: MetricParams = MetricParams(), rtol=1e-6,
             return_info=False):
    """Next code of a discrete geodesic through ``alpha0`` and ``alpha1``.

    Solves ``Phi(beta) = 0`` for the step ``beta = alpha2 - alpha1``, where
    ``Phi`` is the derivative of the two-segment path energy with respect to
    the middle code. Starts from the forward-Euler guess
    ``beta = alpha1 - alpha0``.

    Raises
    ------
    SolverError
        If ``|Phi|`` at the result is not below ``rtol`` times its value at
        the initial guess.
    """
    a0 = basis._code(alpha0)
    a1 = basis._code(alpha1)
    system = _StepSystem(basis, a0, a1, params)
    guess = a1 - a0
    r0 = system.residual(guess)
    scale = float(np.linalg.norm(r0))
    info = {"initial_residual": scale, "residual": scale, "relative_residual": 0.0,
            "evaluations": 1}
    if scale == 0.0:
        alpha2 = a1 + guess
        return (alpha2, info) if return_info else alpha2
    res = optimize.least_squares(system.residual, guess, jac=system.jacobian, method="lm",
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    beta = res.x
    final = float(np.linalg.norm(system.residual(beta)))
    info.update(residual=final, relative_residual=final / scale, evaluations=int(res.nfev),
                status=int(res.status))
    if not final <= rtol * scale:
        raise SolverError(
            f"shooting step did not converge (relative residual {final / scale:.3e})",
            report=info, alpha0=a0, alpha1=a1,
        )
    alpha2 = a1 + beta
    return (alpha2, info) if return_info else alpha2


def solve_ivp(basis: Basis, alpha0, beta, N: int, params: MetricParams = MetricParams(),
              rtol=1e-6):
    """Discrete geodesic from ``alpha0`` with time-one velocity ``beta``.

    Returns a :class:`LatentPath` with ``N + 1`` codes. A failing step raises
    :class:`SolverError` carrying the partial path and the failing index.
    """
    if int(N) < 1:
        raise ValueError("N must be at least 1")
    a0 = basis._code(alpha0)
    b = basis._code(beta)
    codes = [a0, a0 + b / N]
    for step in range(2, N + 1):
        try:
            codes.append(ivp_step(basis, codes[-2], codes[-1], params, rtol=rtol))
        except SolverError as exc:
            raise SolverError(str(exc), report=exc.report, failed_index=step,
                              partial_path=np.array(codes)) from exc
    return LatentPath(np.array(codes), basis.n)

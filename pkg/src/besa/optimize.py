"""Quasi-Newton minimization driver with per-stage reporting."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .errors import BesaError, SolverError


@dataclass
class StageReport:
    iterations: int = 0
    evaluations: int = 0
    objective: float = float("nan")
    grad_norm: float = float("nan")
    converged: bool = False
    failed: bool = False
    message: str = ""
    history: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    error: dict | None = None


@dataclass
class OptimizerReport:
    stages: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def converged(self):
        return bool(self.stages) and all(s.converged for s in self.stages)

    @property
    def failed(self):
        return any(s.failed for s in self.stages)

    @property
    def iterations(self):
        return sum(s.iterations for s in self.stages)

    def to_dict(self, history=False):
        stages = []
        for s in self.stages:
            d = asdict(s)
            if not history:
                d.pop("history")
            stages.append(d)
        return {"stages": stages, "wall_time": self.wall_time,
                "converged": self.converged, "failed": self.failed}


class _Abort(Exception):
    pass


def minimize(fun, x0, max_iter=500, grad_tol=1e-6, relative=True, ftol=0.0, memory=10):
    """Minimize ``fun(x) -> (value, grad)`` with L-BFGS.

    Parameters
    ----------
    fun : callable
        Returns the objective and its gradient for a flat vector.
    x0 : array_like
    max_iter : int
    grad_tol : float
        Stop once the max-norm of the gradient is below ``grad_tol``, scaled
        by the initial gradient's max-norm when ``relative``.
    ftol : float
        Relative-decrease stopping threshold passed to the line-search driver.

    Returns
    -------
    x : ndarray
        Last accepted iterate.
    report : StageReport
        ``failed`` is set if an evaluation raised a package error, in which
        case ``x`` is the last accepted iterate before the failure.
    """
    x0 = np.array(x0, dtype=np.float64).ravel()
    try:
        f0, g0 = fun(x0)
    except BesaError as exc:
        report = StageReport(evaluations=1, failed=True, error=exc.to_dict(),
                             message="aborted: " + str(exc))
        return x0, report
    f0 = float(f0)
    g0 = np.asarray(g0, dtype=np.float64).ravel()
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise SolverError("objective is not finite at the starting point", objective=f0)

    report = StageReport(evaluations=1, objective=f0, grad_norm=float(np.linalg.norm(g0)),
                         history=[f0])
    g0max = float(np.max(np.abs(g0))) if g0.size else 0.0
    if g0max == 0.0:
        report.converged = True
        report.message = "zero gradient at the starting point"
        return x0, report
    gtol = grad_tol * g0max if relative else grad_tol

    cache = {"x": x0.copy(), "f": f0, "g": g0}
    best = {"x": x0.copy(), "f": f0, "g": g0}

    def wrapped(x):
        if np.array_equal(x, cache["x"]):
            return cache["f"], cache["g"]
        try:
            f, g = fun(x)
        except BesaError as exc:
            report.error = exc.to_dict()
            raise _Abort from exc
        report.evaluations += 1
        f = float(f)
        g = np.asarray(g, dtype=np.float64).ravel()
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            # make the line search back off
            return np.inf, np.zeros_like(g)
        cache.update(x=x.copy(), f=f, g=g)
        return f, g

    def callback(intermediate_result):
        x = intermediate_result.x
        f, g = wrapped(x)
        best.update(x=x.copy(), f=f, g=g)
        report.history.append(f)

    try:
        res = optimize.minimize(
            wrapped, x0, jac=True, method="L-BFGS-B", callback=callback,
            options=dict(maxiter=max_iter, maxfun=max(20 * max_iter, 100), gtol=gtol,
                         ftol=ftol, maxcor=memory),
        )
    except _Abort:
        report.failed = True
        report.iterations = len(report.history) - 1
        report.objective = best["f"]
        report.grad_norm = float(np.linalg.norm(best["g"]))
        report.message = "aborted: " + (report.error or {}).get("message", "")
        return best["x"], report

    x = res.x
    if res.fun > best["f"]:
        x = best["x"]
    f, g = wrapped(x)
    report.iterations = int(res.nit)
    report.objective = float(f)
    report.grad_norm = float(np.linalg.norm(g))
    report.converged = bool(np.max(np.abs(g)) <= gtol) or bool(res.success and res.nit < max_iter)
    report.message = str(res.message)
    return x, report

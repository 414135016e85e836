import numpy as np
import pytest
from scipy.optimize import rosen, rosen_der

from besa.errors import DimensionError, SolverError
from besa.optimize import minimize


def test_quadratic_matches_linear_solve(rng):
    Q0 = rng.normal(size=(20, 20))
    U, _ = np.linalg.qr(Q0)
    Q = U @ np.diag(np.linspace(1, 10, 20)) @ U.T
    b = rng.normal(size=20)
    x, rep = minimize(lambda x: (0.5 * x @ Q @ x - b @ x, Q @ x - b), np.zeros(20),
                      grad_tol=1e-12)
    assert np.linalg.norm(x - np.linalg.solve(Q, b)) < 1e-8
    assert rep.converged and not rep.failed


def test_zero_gradient_start():
    x0 = np.array([1.0, 2.0])
    x, rep = minimize(lambda x: (0.0, np.zeros(2)), x0)
    assert rep.iterations == 0 and rep.converged
    np.testing.assert_array_equal(x, x0)


def test_rosenbrock():
    x, rep = minimize(lambda x: (rosen(x), rosen_der(x)), [-1.2, 1.0], grad_tol=1e-10,
                      relative=False)
    assert np.linalg.norm(x - 1.0) < 1e-6
    assert np.linalg.norm(rosen_der(x)) < 1e-8


def test_history_nonincreasing(rng):
    x, rep = minimize(lambda x: (rosen(x), rosen_der(x)), rng.normal(size=6), max_iter=300)
    h = np.array(rep.history)
    assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]))
    assert rep.iterations == len(h) - 1


def test_nonfinite_start_raises():
    with pytest.raises(SolverError):
        minimize(lambda x: (np.nan, np.zeros(1)), [0.0])


def test_package_error_aborts_with_last_iterate():
    calls = []

    def fun(x):
        calls.append(x.copy())
        if len(calls) > 6:
            raise DimensionError("boom")
        return rosen(x), rosen_der(x)

    x, rep = minimize(fun, [-1.2, 1.0], max_iter=50)
    assert rep.failed and "boom" in rep.message
    assert rep.error["error"] == "DimensionError"
    assert rep.objective == rosen(x) == rep.history[-1]


def test_iteration_cap():
    x, rep = minimize(lambda x: (rosen(x), rosen_der(x)), [-1.2, 1.0], max_iter=3)
    assert rep.iterations <= 3 and not rep.converged

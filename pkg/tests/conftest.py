import numpy as np
import pytest

from besa.basis import build_basis, motion_tangents, shape_tangents
from besa.latent import Basis
from besa.synthetic import smooth_field, synthetic_training_data, torus

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def desk_data():
    return synthetic_training_data(seed=0)


@pytest.fixture(scope="session")
def desk_basis(desk_data):
    """The n = 8, m = 4 basis on the 400-vertex synthetic template."""
    tm = desk_data["template"]
    basis, _ = build_basis(motion_tangents(desk_data["motions"], tm),
                           shape_tangents(desk_data["shapes"], tm), 8, 4, tm)
    return basis


@pytest.fixture(scope="session")
def small_basis():
    """Random smooth basis on a coarse torus, cheap enough for many calls."""
    r = np.random.default_rng(7)
    tm = torus(8, 6, scale=0.5)
    fields = np.array([smooth_field(tm, r, 4, 0.1) for _ in range(5)])
    return Basis(tm, fields[:3], fields[3:])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

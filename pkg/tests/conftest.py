import numpy as np
import pytest

from collapse_lab.hilbert import OperatorMatrix, StateVector

ACCEPTANCE_LINES = []


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_vector(rng, n):
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def random_system(rng, dims):
    n = int(np.prod(dims))
    return (OperatorMatrix.from_matrix(dims, random_hermitian(rng, n)),
            StateVector.from_amps(dims, random_vector(rng, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line[1])

import numpy as np
import pytest


def random_hpd(rng, dim, shift=0.1):
    h = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return h @ h.conj().T / dim + shift * np.eye(dim)


def random_herm(rng, dim):
    h = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (h + h.conj().T)


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# PASS/FAIL lines appended by the acceptance module, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section('acceptance criteria')
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)

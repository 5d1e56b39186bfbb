import numpy as np
import pytest

from qadv import _backend, qkernel
from qadv.qkernel import PSD_TOL, SYM_TOL

BACKENDS = ["python"] + (["cython"] if _backend.HAVE_CYTHON else [])

# acceptance outcomes, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def assert_fidelity_gram(K):
    """Symmetric, unit diagonal, entries in [0, 1], PSD."""
    K = np.asarray(getattr(K, "values", K))
    assert np.max(np.abs(K - K.T)) <= SYM_TOL
    assert np.max(np.abs(np.diag(K) - 1.0)) <= SYM_TOL
    assert K.min() >= 0.0 and K.max() <= 1.0
    assert np.linalg.eigvalsh(K).min() >= -PSD_TOL


@pytest.fixture(autouse=True)
def audit_gram_matrices(monkeypatch):
    """Every Gram matrix built through gram_matrix during the suite must be a valid fidelity Gram."""
    original = qkernel.gram_from_states

    def checked(states, workers=1):
        K = original(states, workers)
        assert_fidelity_gram(K)
        return K
    monkeypatch.setattr(qkernel, "gram_from_states", checked)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

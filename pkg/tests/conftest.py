import hypothesis
import numpy as np
import pytest

from sparsevar import VarModel

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_stable_model(rng, P, d, radius=0.9, sigma=None):
    """Random VAR(d) whose companion spectral radius is at most ``radius``."""
    from sparsevar.model import check_stationarity

    phi = rng.normal(size=(d, P, P)) / np.sqrt(P * d)
    rho = check_stationarity(phi)
    if rho > radius:
        # scaling lag l by c**l scales every companion eigenvalue by c
        c = radius / rho
        phi = phi * c ** np.arange(1, d + 1)[:, None, None]
    if sigma is None:
        L = rng.normal(size=(P, P)) / np.sqrt(P)
        sigma = L @ L.T + 0.5 * np.eye(P)
    return VarModel(phi, sigma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_symmetric(n, seed, spread=1.0):
    """Dense symmetric matrix with a known spectrum, returned with its eigenvalues (ascending)."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.sort(rng.uniform(-spread, spread, n))
    return (q * lam) @ q.T, lam


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def separated_symmetric(n, k, l, seed, gap=8.0):
    """Symmetric matrix whose ``k`` top and ``l`` bottom eigenvalues stand clear of a bulk in [-1, 1].

    The outliers grow geometrically from ``gap``, the shape of a typical
    network Hessian. Returns ``(H, ascending eigenvalues)``.
    """
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.sort(np.concatenate([
        -gap * 1.5 ** np.arange(l), rng.uniform(-1, 1, n - k - l), gap * 1.5 ** np.arange(k)
    ]))
    H = (q * lam) @ q.T
    return 0.5 * (H + H.T), lam


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, in order, whether or not -s was given
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])

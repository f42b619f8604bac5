import numpy as np
import pytest


def sine_curves(rng, n, n_grid=100, n_comp=50, noise_var=0.0, alpha=1.5):
    """Curves sum_k zeta_k sqrt(2) sin(k pi t) with zeta_k ~ N(0, k^-alpha) on [0, 1]."""
    t = np.linspace(0.0, 1.0, n_grid)
    k = np.arange(1, n_comp + 1)
    lam = k ** -alpha
    zeta = rng.standard_normal((n, n_comp)) * np.sqrt(lam)
    psi = np.sqrt(2.0) * np.sin(np.pi * np.outer(k, t))
    U = zeta @ psi
    if noise_var:
        U = U + rng.normal(0.0, np.sqrt(noise_var), U.shape)
    return t, U, zeta, lam, psi


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    _CRITERIA.append((number, f"criterion {number:>2} {status}  {title}" + (f"  [{detail}]" if detail else "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERIA):
        terminalreporter.write_line(line)

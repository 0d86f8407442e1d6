import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running scaling runs")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_DECOMP = {}


@pytest.fixture(scope="session")
def decomposed():
    """Memoized decomposition of a builtin surface at one scale."""
    from svlab.decomposition import scenario_params, severi_decompose
    from svlab.scenarios import builtin

    def get(name, delta):
        key = (name, delta)
        if key not in _DECOMP:
            sc = builtin(name)
            p = scenario_params(delta)
            _DECOMP[key] = severi_decompose(sc.poly(delta), delta, p["s"], p["u"], p["kappa"], p["c"])
        return _DECOMP[key]

    return get


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_svlab_acceptance", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request, capsys):
    """Print and record one PASS/FAIL line, then assert it."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        if not hasattr(request.config, "_svlab_acceptance"):
            request.config._svlab_acceptance = []
        request.config._svlab_acceptance.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record

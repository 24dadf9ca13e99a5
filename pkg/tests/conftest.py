import numpy as np
import pytest

from netdroop.design import DesignConfig
from netdroop.grid import SYNTH_PRESETS, builtin_feeder, synth_scenario
from netdroop.pipeline import design_window, fit_window_model
from netdroop.uncertainty import forecast_mu


def one_line_voltage(v0, r, x, p, q):
    """|V| at the far end of one line feeding injection p + jq, via bisection on
    ``u^2 + (2(r*pl + x*ql) - v0^2) u + (r^2 + x^2)(pl^2 + ql^2) = 0`` with
    ``u = |V|^2`` and load ``pl = -p``, ``ql = -q`` (upper root)."""
    pl, ql = -p, -q
    b = 2 * (r * pl + x * ql) - v0**2
    c = (r * r + x * x) * (pl * pl + ql * ql)
    f = lambda u: u * u + b * u + c  # noqa: E731
    lo, hi = -b / 2, 4 * v0**2
    assert f(lo) <= 0 <= f(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return np.sqrt(0.5 * (lo + hi))


@pytest.fixture(scope="session")
def two_bus():
    return builtin_feeder("two_bus")


@pytest.fixture(scope="session")
def ieee37():
    return builtin_feeder("ieee37")


@pytest.fixture(scope="session")
def clear37(ieee37):
    return synth_scenario(7, "clear_sky", ieee37, 900)


@pytest.fixture(scope="session")
def model37(ieee37, clear37):
    return fit_window_model(ieee37, clear37, (0, 900))


@pytest.fixture(scope="session")
def mu37(ieee37, clear37):
    z = np.zeros(ieee37.n)
    return forecast_mu(clear37, (0, 900), z, z, ieee37).mu


@pytest.fixture(scope="session")
def p1_37(ieee37, clear37, model37):
    return design_window(ieee37, clear37, (0, 900), DesignConfig(), model=model37)[1]


@pytest.fixture(scope="session")
def p2_37(ieee37, clear37, model37):
    return design_window(ieee37, clear37, (0, 900), DesignConfig(robust=True), model=model37)[1]


@pytest.fixture(scope="session")
def high_pv37(ieee37):
    return synth_scenario(7, "clear_sky", ieee37, 1800, SYNTH_PRESETS["high_pv"])


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one ``PASS``/``FAIL`` line; call it before asserting so failures are reported too."""

    def record(criterion: int, passed: bool, detail: str) -> None:
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

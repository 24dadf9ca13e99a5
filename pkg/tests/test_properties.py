"""Property-based checks over randomly generated inputs."""

import sys

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from netdroop.control import project_setpoint
from netdroop.grid import Bus, Feeder, FeederError, InverterSpec, Line, Scenario, feeder_from_dict, synth_scenario
from netdroop.powerflow import solve_pf, solve_pf_newton
from netdroop.uncertainty import UncertaintySet, build_box_set, forecast_mu, support_box_oracle, support_dual

lin = sys.modules["netdroop.linearize"]

finite = dict(allow_nan=False, allow_infinity=False)
SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def radial_feeders(draw, max_buses=7):
    n = draw(st.integers(1, max_buses - 1))
    parents = [draw(st.integers(0, i)) for i in range(n)]
    lines = tuple(
        Line(parents[i], i + 1, draw(st.floats(0.001, 0.03)), draw(st.floats(0.001, 0.03))) for i in range(n)
    )
    buses = [Bus(0, None, 0.0, 0.0, None)]
    for i in range(1, n + 1):
        inv = InverterSpec(draw(st.floats(0.05, 0.5)), i) if draw(st.booleans()) else None
        buses.append(Bus(i, inv, -draw(st.floats(0, 0.1)), -draw(st.floats(0, 0.05)), None))
    return Feeder(tuple(buses), lines, 1.0, 1000.0, 4.16, "random")


@SETTINGS
@given(radial_feeders())
def test_feeder_round_trip(feeder):
    assert feeder_from_dict(feeder.to_dict()) == feeder


@SETTINGS
@given(radial_feeders(), st.integers(0, 5))
def test_extra_or_missing_line_rejected(feeder, which):
    lines = list(feeder.lines)
    extra = lines + [Line(0, len(feeder.buses) - 1, 0.01, 0.01)]
    for bad in (extra, lines[:-1]):
        try:
            Feeder(feeder.buses, tuple(bad), 1.0, 1000.0, 4.16)
        except FeederError:
            continue
        raise AssertionError("non-radial feeder accepted")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["clear_sky", "cloudy", "step_change"]), st.integers(2, 60))
def test_synth_is_pure(seed, profile, steps):
    from netdroop.grid import builtin_feeder

    f = builtin_feeder("two_bus")
    assert synth_scenario(seed, profile, f, steps) == synth_scenario(seed, profile, f, steps)


@SETTINGS
@given(radial_feeders(), st.data())
def test_power_flow_solvers_agree_and_deterministic(feeder, data):
    n = feeder.n
    p = np.array(data.draw(st.lists(st.floats(-0.3, 0.1), min_size=n, max_size=n)))
    q = np.array(data.draw(st.lists(st.floats(-0.15, 0.1), min_size=n, max_size=n)))
    a = solve_pf(feeder, p, q, tol=1e-10)
    b = solve_pf(feeder, p, q, tol=1e-10)
    assert np.array_equal(a.v_mag, b.v_mag) and np.array_equal(a.v_ang, b.v_ang)
    assert np.all(a.v_mag > 0)
    newton = solve_pf_newton(feeder, p, q, tol=1e-10)
    np.testing.assert_allclose(newton.v_mag, a.v_mag, atol=1e-6)


@SETTINGS
@given(radial_feeders(max_buses=5), st.data())
def test_linearization_exact_at_point(feeder, data):
    n = feeder.n
    p = np.array(data.draw(st.lists(st.floats(-0.2, 0.05), min_size=n, max_size=n)))
    q = np.array(data.draw(st.lists(st.floats(-0.1, 0.05), min_size=n, max_size=n)))
    m = lin.linearize(feeder, p, q)
    np.testing.assert_allclose(m.predict(p, q), m.v_bar, atol=1e-12)
    assert np.linalg.norm(m.H, 2) > 0
    z = np.zeros(n)
    shifted = m.rebase(z, z)
    np.testing.assert_allclose(shifted.predict(z, z), shifted.v_bar, atol=1e-12)


@SETTINGS
@given(st.floats(-0.8, 0.3), st.floats(-0.4, 0.3))
def test_one_line_sensitivity_signs(p, q):
    from netdroop.grid import builtin_feeder

    f = builtin_feeder("two_bus")
    m = lin.linearize(f, [p], [q])
    if m.v_bar[0] > 0.7:
        assert m.R[0, 0] > 0 and m.B[0, 0] > 0


def boxes(k):
    lo = st.lists(st.floats(-2, 1, **finite), min_size=k, max_size=k)
    width = st.lists(st.floats(0, 2, **finite), min_size=k, max_size=k)
    return st.tuples(lo, width).map(lambda t: (np.array(t[0]), np.array(t[0]) + np.array(t[1])))


def directions(k):
    return st.lists(st.floats(-5, 5, **finite), min_size=k, max_size=k).map(np.array)


@SETTINGS
@given(st.integers(1, 5).flatmap(lambda k: st.tuples(boxes(k), directions(k), directions(k), st.floats(0, 10))))
def test_support_properties(args):
    (lo, hi), a, b, t = args
    u = UncertaintySet.box(lo, hi)
    sa = support_dual(a, u)[0]
    sb = support_dual(b, u)[0]
    assert abs(sa - support_box_oracle(a, lo, hi)) <= 1e-8
    assert support_dual(a + b, u)[0] <= sa + sb + 1e-8
    assert abs(support_dual(t * a, u)[0] - t * sa) <= 1e-8 * max(1.0, abs(t * sa))


@SETTINGS
@given(st.integers(0, 2**31), st.integers(2, 40), st.data())
def test_mu_in_box(seed, steps, data):
    rng = np.random.default_rng(seed)
    sc = Scenario(1.0, rng.normal(size=(steps, 3)), rng.normal(size=(steps, 3)), np.zeros((steps, 3)))
    start = data.draw(st.integers(0, steps - 1))
    stop = data.draw(st.integers(start + 1, steps))
    ref = rng.normal(size=3)
    mu = forecast_mu(sc, (start, stop), ref, -ref).mu
    assert build_box_set(sc, (start, stop), ref, -ref).contains(mu, tol=1e-12)


points = st.tuples(st.floats(-3, 3, **finite), st.floats(-3, 3, **finite))
limits = st.tuples(st.floats(0, 2.5, **finite), st.floats(0.05, 2, **finite))


@settings(max_examples=300, deadline=None)
@given(points, points, limits)
def test_projection_properties(x, y, lim):
    pav, s = lim
    px = np.array(project_setpoint(*x, pav, s))
    py = np.array(project_setpoint(*y, pav, s))
    # feasibility
    assert -1e-12 <= px[0] <= min(pav, s) + 1e-12
    assert px @ px <= s * s + 1e-12
    # idempotence
    np.testing.assert_allclose(project_setpoint(*px, pav, s), px, atol=1e-12)
    # non-expansiveness
    assert np.linalg.norm(px - py) <= np.linalg.norm(np.subtract(x, y)) + 1e-12
    # the origin is feasible, so projecting never moves a point further out
    assert np.linalg.norm(px) <= np.linalg.norm(x) + 1e-12

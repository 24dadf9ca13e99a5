import numpy as np
import pytest

from netdroop.design import (
    DesignConfig,
    DroopGains,
    StabilityError,
    check_stability,
    design_p1,
    design_p2,
    fixed_point_iterate,
    fixed_point_voltage,
    hg_matrix,
    neuman_error_sweep,
    neuman_matrix_error_sweep,
)
from netdroop.linearize import LinearModel
from netdroop.oracles import design_objective, two_bus_design_grid
from netdroop.pipeline import fit_window_model
from netdroop.grid import synth_scenario
from netdroop.uncertainty import UncertaintySet, box_vertices, build_box_set, forecast_mu, support_box_oracle


def toy_model(R, B):
    R, B = np.atleast_2d(R).astype(float), np.atleast_2d(B).astype(float)
    n = R.shape[0]
    z = np.zeros(n)
    return LinearModel(R, B, np.ones(n), z, z, np.ones(n))


def assert_gain_invariants(model, gains, mask, eps0=1e-3):
    assert np.all(gains.g_p <= 0) and np.all(gains.g_q <= 0)
    off = ~np.asarray(mask, bool)
    assert np.all(gains.g_p[off] == 0) and np.all(gains.g_q[off] == 0)
    assert eps0 <= gains.epsilon <= 1
    assert np.linalg.norm(gains.G @ model.H, "fro") <= 1 - gains.epsilon + 1e-9


def test_zero_forecast_gives_zero_deviation(model37, ieee37):
    g = design_p1(model37, np.zeros(2 * ieee37.n), ieee37.inverter_mask, DesignConfig(gamma=0.0))
    assert g.meta["e_inf"] == pytest.approx(0.0, abs=1e-9)
    assert g.objective_value == pytest.approx(0.0, abs=1e-7)


def test_large_gamma_forces_zero_gains(model37, ieee37, mu37):
    gamma = 1e3 * np.max(np.abs(model37.H @ mu37))
    g = design_p1(model37, mu37, ieee37.inverter_mask, DesignConfig(gamma=gamma))
    assert g.epsilon == pytest.approx(1.0, abs=1e-6)
    assert np.max(np.abs(g.G)) < 1e-6


def test_designed_invariants(model37, ieee37, p1_37, p2_37):
    for g in (p1_37, p2_37):
        assert_gain_invariants(model37, g, ieee37.inverter_mask)
        st = check_stability(model37, g)
        assert st["margin_ok"] and st["rho"] <= st["spec"] <= st["frob"] + 1e-9


def test_design_rejects_mismatched_config(model37, ieee37, mu37):
    with pytest.raises(ValueError):
        design_p1(model37, mu37, ieee37.inverter_mask, DesignConfig(robust=True))
    with pytest.raises(ValueError):
        design_p1(model37, mu37[:3], ieee37.inverter_mask)


@pytest.mark.parametrize("kwargs", [{"objective": "bogus"}, {"epsilon0": 1.0}, {"epsilon0": 0.0}, {"gamma": -1.0}, {"eta_p": -1.0}, {"m_q": -1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        DesignConfig(**kwargs)


@pytest.fixture(scope="module")
def two_bus_case(two_bus):
    sc = synth_scenario(1, "cloudy", two_bus, 600)
    model = fit_window_model(two_bus, sc, (0, 600))
    z = np.zeros(1)
    return model, forecast_mu(sc, (0, 600), z, z, two_bus).mu, build_box_set(sc, (0, 600), z, z, two_bus)


@pytest.mark.parametrize("scale", [1.0, 8.0, -6.0])
def test_two_bus_p1_matches_grid(two_bus_case, scale):
    model, mu, _ = two_bus_case
    mu = scale * mu
    cfg = DesignConfig()
    g = design_p1(model, mu, [True], cfg)
    ref, _ = two_bus_design_grid(model, mu, cfg)
    assert design_objective(model, g, mu, cfg.gamma) == pytest.approx(ref, abs=1e-4)
    assert g.objective_value == pytest.approx(ref, abs=1e-4)


@pytest.mark.parametrize("scale", [1.0, 8.0])
def test_two_bus_p2_matches_grid(two_bus_case, scale):
    model, _, box = two_bus_case
    lo, hi = scale * box.lower, scale * box.upper
    cfg = DesignConfig(robust=True)
    g = design_p2(model, UncertaintySet.box(lo, hi), [True], cfg)
    verts = box_vertices(lo, hi)
    ref, _ = two_bus_design_grid(model, verts, cfg)
    assert design_objective(model, g, verts, cfg.gamma) == pytest.approx(ref, abs=1e-4)
    assert g.objective_value == pytest.approx(ref, abs=1e-4)


def test_two_bus_volt_var_only_matches_grid(two_bus_case):
    model, mu, _ = two_bus_case
    cfg = DesignConfig(volt_var_only=True)
    g = design_p1(model, 8 * mu, [True], cfg)
    assert np.all(g.g_p == 0)
    ref, _ = two_bus_design_grid(model, 8 * mu, cfg)
    assert g.objective_value == pytest.approx(ref, abs=1e-4)


def test_singleton_p2_equals_p1(model37, ieee37, mu37):
    p1 = design_p1(model37, mu37, ieee37.inverter_mask, DesignConfig())
    p2 = design_p2(model37, UncertaintySet.box(mu37, mu37), ieee37.inverter_mask, DesignConfig(robust=True))
    assert p2.objective_value == pytest.approx(p1.objective_value, abs=1e-6)


def test_masked_p2_is_worst_case_of_h(model37, ieee37):
    rng = np.random.default_rng(0)
    half = rng.uniform(0.01, 0.1, 2 * ieee37.n)
    box = UncertaintySet.box(-half, half)
    g = design_p2(model37, box, np.zeros(ieee37.n, bool), DesignConfig(robust=True))
    H = model37.H
    t = max(max(support_box_oracle(H[i], -half, half), support_box_oracle(-H[i], -half, half)) for i in range(ieee37.n))
    assert g.meta["t"] == pytest.approx(t, rel=1e-7)
    assert np.all(g.G == 0)


def test_robust_dominates_nominal(model37, ieee37):
    rng = np.random.default_rng(11)
    for _ in range(3):
        c = rng.normal(0, 0.05, 2 * ieee37.n)
        w = rng.uniform(0.0, 0.05, 2 * ieee37.n)
        box = UncertaintySet.box(c - w, c + w)
        t = design_p2(model37, box, ieee37.inverter_mask, DesignConfig(robust=True)).meta["t"]
        for _ in range(3):
            mu = rng.uniform(c - w, c + w)
            e = design_p1(model37, mu, ieee37.inverter_mask, DesignConfig()).meta["e_inf"]
            assert t >= e - 1e-7


def test_feasibility_anchor_random(ieee37):
    rng = np.random.default_rng(2)
    for _ in range(3):
        R = rng.uniform(0, 0.2, (4, 4))
        R = R + R.T
        m = toy_model(R, 0.8 * R)
        mu = rng.normal(size=8)
        g = design_p1(m, mu, [True, False, True, True])
        assert_gain_invariants(m, g, [True, False, True, True])


def test_volt_var_only(model37, ieee37, mu37):
    g = design_p1(model37, mu37, ieee37.inverter_mask, DesignConfig(volt_var_only=True))
    assert np.all(g.g_p == 0.0)
    assert np.any(g.g_q < 0)


def test_participation_shifts_effort(model37, ieee37, mu37):
    base = design_p1(model37, mu37, ieee37.inverter_mask, DesignConfig())
    heavy_p = design_p1(model37, mu37, ieee37.inverter_mask, DesignConfig(objective="participation", m_p=100.0))
    heavy_q = design_p1(model37, mu37, ieee37.inverter_mask, DesignConfig(objective="participation", m_q=100.0))
    assert np.sum(heavy_p.g_p**2) < np.sum(base.g_p**2)
    assert np.sum(heavy_q.g_q**2) < np.sum(base.g_q**2)


def test_sparsity_monotone(model37, ieee37, mu37):
    counts = []
    for eta in (0.0, 3e-4, 1e-3, 3e-3):
        g = design_p1(model37, mu37, ieee37.inverter_mask, DesignConfig(objective="sparsity", eta_p=eta, eta_q=eta))
        counts.append(g.active_count())
    assert counts == sorted(counts, reverse=True)
    assert counts[0] > counts[-1]


def test_check_stability_examples():
    m = toy_model([[0.5]], [[0.5]])
    zero = check_stability(m, DroopGains.zeros(1))
    assert zero["frob"] == zero["spec"] == zero["rho"] == 0.0
    st = check_stability(m, DroopGains([-0.4], [-0.4], 0.5))
    assert st["spec"] == pytest.approx(0.4, abs=1e-12)
    assert st["rho"] == pytest.approx(0.4, abs=1e-12)
    assert st["frob"] == pytest.approx(0.4, abs=1e-12)


def test_neuman_examples():
    m = toy_model([[1.0]], [[0.0]])
    g = DroopGains([-0.5], [0.0], 0.5)
    err = neuman_error_sweep(m, g, [1.0, 0.0], [0.0, 1.0])
    assert err[0] == 0.0
    assert err[1] == pytest.approx(0.25, abs=1e-12)
    assert neuman_error_sweep(m, g, [0.0, 0.0], [1.0]) == [0.0]
    assert neuman_matrix_error_sweep(m, g, [1.0])[0] == pytest.approx(0.25, abs=1e-12)


def test_fixed_point_examples():
    m = toy_model(np.eye(2), np.zeros((2, 2)))
    mu = np.array([1.0, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(fixed_point_voltage(m, DroopGains.zeros(2), mu), [1.0, 1.0])
    g = DroopGains([-0.5, -0.5], [0.0, 0.0], 0.5)
    np.testing.assert_allclose(fixed_point_voltage(m, g, np.zeros(4)), 0.0)
    np.testing.assert_allclose(fixed_point_voltage(m, g, mu), [2 / 3, 2 / 3], atol=1e-15)


def test_fixed_point_rejects_unstable():
    m = toy_model(np.eye(1), np.zeros((1, 1)))
    with pytest.raises(StabilityError):
        fixed_point_voltage(m, DroopGains([-1.5], [0.0], 0.0), [1.0, 0.0])


def test_fixed_point_geometric_rate(model37, p1_37, p2_37, mu37):
    for g in (p1_37, p2_37):
        rho = check_stability(model37, g)["rho"]
        e, hist = fixed_point_iterate(model37, g, mu37, tol=1e-13, max_iter=400)
        hist = np.array(hist)
        assert hist[-1] <= 1e-13
        # asymptotic rate: after the transient, before round-off
        tail = [k for k in range(20, len(hist)) if hist[k] > 1e-11]
        ratios = hist[tail] / hist[np.array(tail) - 1]
        assert ratios.max() <= rho + 1e-6


def test_gains_json_round_trip(tmp_path, p2_37):
    p2_37.save(tmp_path / "g.json")
    back = DroopGains.load(tmp_path / "g.json")
    np.testing.assert_array_equal(back.g_p, p2_37.g_p)
    np.testing.assert_array_equal(back.g_q, p2_37.g_q)
    assert back.epsilon == p2_37.epsilon


def test_shifted_moves_only_active():
    g = DroopGains([0.0, -0.2], [-0.1, 0.0], 0.5)
    s = g.shifted(-0.075)
    np.testing.assert_allclose(s.g_p, [0.0, -0.275])
    np.testing.assert_allclose(s.g_q, [-0.175, 0.0])


def test_hg_matrix_matches_product(model37, p1_37):
    np.testing.assert_allclose(hg_matrix(model37, p1_37), model37.H @ p1_37.G, atol=1e-14)

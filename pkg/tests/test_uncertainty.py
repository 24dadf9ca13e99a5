import numpy as np
import pytest

from netdroop.grid import Scenario
from netdroop.uncertainty import (
    UncertaintyError,
    UncertaintySet,
    box_vertices,
    build_box_set,
    forecast_mu,
    support_box_oracle,
    support_dual,
)


def scenario(p, q=None, pav=None):
    p = np.asarray(p, float)
    q = np.zeros_like(p) if q is None else np.asarray(q, float)
    pav = np.zeros_like(p) if pav is None else np.asarray(pav, float)
    return Scenario(1.0, p, q, pav)


def test_mu_zero_at_reference():
    sc = scenario(np.full((6, 2), -0.3), np.full((6, 2), 0.1))
    assert np.allclose(forecast_mu(sc, (0, 6), [-0.3, -0.3], [0.1, 0.1]).mu, 0.0)


def test_mu_single_step():
    rng = np.random.default_rng(0)
    sc = scenario(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)))
    mu = forecast_mu(sc, (3, 4), [0.1, 0.2], [0.0, 0.0]).mu
    np.testing.assert_array_equal(mu, np.concatenate([sc.p_load[3] - [0.1, 0.2], sc.q_load[3]]))


def test_mu_ramp_midpoint():
    ramp = np.linspace(-1.0, 1.0, 11)[:, None]
    mu = forecast_mu(scenario(ramp), (0, 11), [0.0], [0.0]).mu
    assert mu[0] == pytest.approx(0.0, abs=1e-15)


def test_mu_with_feeder_counts_pv(two_bus):
    sc = scenario(np.full((4, 1), -0.1), pav=np.full((4, 1), 0.3))
    mu = forecast_mu(sc, (0, 4), [0.0], [0.0], two_bus).mu
    assert mu[0] == pytest.approx(0.2)


@pytest.mark.parametrize("window", [(2, 2), (3, 1), (0, 9)])
def test_bad_window(window):
    sc = scenario(np.zeros((5, 1)))
    with pytest.raises(UncertaintyError):
        forecast_mu(sc, window, [0.0], [0.0])
    with pytest.raises(UncertaintyError):
        build_box_set(sc, window, [0.0], [0.0])


def test_box_constant_window_degenerate():
    sc = scenario(np.full((4, 1), -0.2))
    box = build_box_set(sc, (0, 4), [0.0], [0.0])
    np.testing.assert_array_equal(box.lower, box.upper)
    assert box.D.shape == (4, 2)


def test_box_min_max():
    sc = scenario(np.array([[-1.0], [0.0], [2.0]]))
    box = build_box_set(sc, (0, 3), [0.0], [0.0])
    assert (box.lower[0], box.upper[0]) == (-1.0, 2.0)


def test_mu_inside_box():
    rng = np.random.default_rng(2)
    sc = scenario(rng.normal(size=(50, 3)), rng.normal(size=(50, 3)))
    z = np.zeros(3)
    assert build_box_set(sc, (5, 40), z, z).contains(forecast_mu(sc, (5, 40), z, z).mu)


def test_box_encoding():
    lo, hi = np.array([-1.0, 0.5]), np.array([2.0, 0.7])
    box = UncertaintySet.box(lo, hi)
    for v in box_vertices(lo, hi):
        assert box.contains(v)
    assert not box.contains([2.1, 0.6])


def test_support_examples():
    box = UncertaintySet.box([-1, -1], [1, 1])
    assert support_dual([0.0, 0.0], box)[0] == pytest.approx(0.0, abs=1e-12)
    assert support_dual([1.0, -2.0], box)[0] == pytest.approx(3.0, abs=1e-9)
    assert support_box_oracle([1, 1], [0, 0], [1, 1]) == 2
    assert support_box_oracle([-1, 0], [-2, -1], [3, 1]) == 2


def test_support_dual_multiplier_certificate():
    rng = np.random.default_rng(3)
    lo = rng.uniform(-1, 0, 4)
    box = UncertaintySet.box(lo, lo + 1)
    a = rng.normal(size=4)
    val, lam = support_dual(a, box)
    assert np.all(lam >= -1e-12)
    np.testing.assert_allclose(box.D.T @ lam, a, atol=1e-9)
    assert lam @ box.d == pytest.approx(val, abs=1e-12)


def test_support_general_polytope_vs_vertices():
    # triangle with vertices (0,0), (1,0), (0,1)
    tri = UncertaintySet.polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    verts = np.array([[0, 0], [1, 0], [0, 1]], float)
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.normal(size=2)
        assert support_dual(a, tri)[0] == pytest.approx(np.max(verts @ a), abs=1e-8)


def test_unbounded_polytope_rejected():
    with pytest.raises(UncertaintyError, match="unbounded"):
        UncertaintySet.polytope([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0])


def test_empty_polytope_rejected():
    with pytest.raises(UncertaintyError, match="empty"):
        UncertaintySet.polytope([[1.0], [-1.0]], [-1.0, 0.0])


def test_dual_infeasible_reports_unbounded_direction():
    half = UncertaintySet(np.array([[1.0, 0.0]]), np.array([1.0]))
    with pytest.raises(UncertaintyError, match="unbounded"):
        support_dual([0.0, 1.0], half)


def test_box_validation():
    with pytest.raises(UncertaintyError):
        UncertaintySet.box([1.0], [0.0])
    with pytest.raises(UncertaintyError):
        UncertaintySet.box([0.0], [np.inf])
    with pytest.raises(UncertaintyError):
        support_box_oracle([1.0], [1.0], [0.0])


def test_set_json_round_trip(tmp_path):
    box = UncertaintySet.box([0.0, -1.0], [1.0, 1.0])
    back = UncertaintySet.from_dict(box.to_dict())
    np.testing.assert_array_equal(back.D, box.D)
    np.testing.assert_array_equal(back.d, box.d)
    tri = UncertaintySet.polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    assert UncertaintySet.from_dict(tri.to_dict()).kind == "general"
    box.save(tmp_path / "u.json")
    assert (tmp_path / "u.json").exists()

"""Brute-force reference computations and the self-check suite behind ``netdroop validate``.

Every oracle here avoids the code path it checks: grid searches instead of
closed forms, vertex enumeration instead of LP duality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .control import project_setpoint
from .design import DesignConfig, DroopGains, check_stability, design_p1, design_p2, fixed_point_iterate, hg_matrix
from .linearize import LinearModel
from .uncertainty import UncertaintySet, box_vertices, support_box_oracle, support_dual


def project_grid(p_tilde: float, q_tilde: float, p_avail: float, s_rating: float, resolution: float = 1e-4) -> tuple[float, float]:
    """Nearest feasible grid point, found by successive grid refinement.

    Each level keeps the bounding box of every grid point whose distance is
    within two steps of the best one, which always contains a grid
    neighbour of the true minimizer.
    """
    s = float(s_rating)
    p_max = min(float(p_avail), s)
    lo_p, hi_p, lo_q, hi_q = 0.0, p_max, -s, s
    step = max(hi_p - lo_p, hi_q - lo_q) / 200
    best = (0.0, 0.0)
    while True:
        step = max(step, resolution)
        ps = np.arange(lo_p, hi_p + step / 2, step)
        qs = np.arange(lo_q, hi_q + step / 2, step)
        P, Q = np.meshgrid(ps, qs, indexing="ij")
        ok = (P >= 0) & (P <= p_max + 1e-15) & (P * P + Q * Q <= s * s + 1e-15)
        d = np.where(ok, (P - p_tilde) ** 2 + (Q - q_tilde) ** 2, np.inf)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        best = (float(P[i, j]), float(Q[i, j]))
        if step <= resolution:
            return best
        # the grid neighbour of the true minimizer is within 2*step in distance
        near = np.sqrt(d) <= np.sqrt(d[i, j]) + 2 * step
        lo_p, hi_p = max(P[near].min() - step, 0.0), min(P[near].max() + step, p_max)
        lo_q, hi_q = max(Q[near].min() - step, -s), min(Q[near].max() + step, s)
        step /= 10


def support_vertices(a, lower, upper) -> float:
    """``max a^T mu`` over a box by enumerating its vertices."""
    return float(np.max(box_vertices(lower, upper) @ np.asarray(a, float)))


def two_bus_design_grid(model: LinearModel, mus: np.ndarray, config: DesignConfig, coarse: float = 1e-3, fine: float = 1e-4) -> tuple[float, np.ndarray]:
    """Brute-force optimum of the one-inverter design over ``g = (g_p, g_q) <= 0``.

    ``mus`` holds one forecast (P1) or the vertices of U (P2); the objective
    is ``max_mu |(1 + H g) H mu| - gamma * eps`` with the margin taken as
    large as the constraint allows, ``eps = 1 - ||H|| ||g||``. The search
    runs over ``u = ||H|| g`` in the disk of radius ``1 - eps0``; ``coarse``
    and ``fine`` are resolutions in ``u``.
    """
    if model.n != 1:
        raise ValueError("grid oracle is for single-bus models")
    h = model.H[0]
    w = float(np.linalg.norm(h))
    s = np.atleast_2d(mus) @ h
    radius = 1.0 - config.epsilon0

    def evaluate(up: np.ndarray, uq: np.ndarray) -> np.ndarray:
        if config.volt_var_only:
            up = np.zeros_like(up)
        gp, gq = up / w, uq / w
        gain = 1.0 + h[0] * gp + h[1] * gq
        dev = np.max(np.abs(gain[..., None] * s), axis=-1)
        eps = 1.0 - np.hypot(up, uq)
        val = dev - config.gamma * eps
        return np.where(np.hypot(up, uq) <= radius + 1e-15, val, np.inf)

    grid = np.arange(-radius, coarse / 2, coarse)
    U_p, U_q = np.meshgrid(grid, grid, indexing="ij")
    vals = evaluate(U_p, U_q)
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    cp_, cq_ = U_p[i, j], U_q[i, j]
    loc_p = np.arange(max(cp_ - 2 * coarse, -radius), min(cp_ + 2 * coarse, 0.0) + fine / 2, fine)
    loc_q = np.arange(max(cq_ - 2 * coarse, -radius), min(cq_ + 2 * coarse, 0.0) + fine / 2, fine)
    loc_p = np.union1d(loc_p, [0.0])
    loc_q = np.union1d(loc_q, [0.0])
    U_p, U_q = np.meshgrid(loc_p, loc_q, indexing="ij")
    vals = evaluate(U_p, U_q)
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    best = float(min(vals[i, j], evaluate(np.array(0.0), np.array(0.0))))
    return best, np.array([U_p[i, j] / w, U_q[i, j] / w])


def design_objective(model: LinearModel, gains: DroopGains, mus: np.ndarray, gamma: float) -> float:
    """Recompute the voltage-deviation objective of returned gains over a set of forecasts."""
    A = model.H + hg_matrix(model, gains) @ model.H
    dev = np.max(np.abs(np.atleast_2d(mus) @ A.T))
    return float(dev - gamma * gains.epsilon)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool | None

    def row(self) -> str:
        status = "INFO" if self.passed is None else ("PASS" if self.passed else "FAIL")
        return f"{self.name:<40} {self.value:>12.3e} {self.tolerance:>10.1e}  {status}"


def projection_gap(p_tilde: float, q_tilde: float, p_avail: float, s_rating: float, resolution: float = 1e-4) -> float:
    """Distance from the candidate to the grid optimum minus its distance to the closed form.

    Negative values mean some grid point beats the closed form. Comparing
    distances rather than points is deliberate: along the circular arc the
    distance is flat to first order, so the grid minimizer's position is only
    accurate to about ``sqrt(resolution)`` while its distance is accurate to
    ``resolution``.
    """
    x = np.array([p_tilde, q_tilde])
    got = np.array(project_setpoint(p_tilde, q_tilde, p_avail, s_rating))
    ref = np.array(project_grid(p_tilde, q_tilde, p_avail, s_rating, resolution))
    return float(np.linalg.norm(ref - x) - np.linalg.norm(got - x))


def check_projection(rng: np.random.Generator, count: int = 200, resolution: float = 1e-4) -> Check:
    worst = 0.0
    for _ in range(count):
        s = rng.uniform(0.1, 2.0)
        p_av = rng.uniform(0.0, 2.5)
        x, y = rng.uniform(-3, 3, size=2)
        gap = projection_gap(x, y, p_av, s, resolution)
        # a grid point closer than the closed form is a failure whatever its size
        worst = max(worst, abs(gap) if gap >= -1e-12 else np.inf)
    tol = 2 * resolution
    return Check("projection vs grid oracle", worst, tol, worst <= tol)


def check_support(rng: np.random.Generator, count: int = 200, support_fn: Callable = support_dual) -> Check:
    worst = 0.0
    for _ in range(count):
        k = int(rng.integers(1, 7))
        lo = rng.uniform(-1, 0.5, size=k)
        hi = lo + rng.uniform(0, 1, size=k)
        a = rng.normal(size=k)
        val, _ = support_fn(a, UncertaintySet.box(lo, hi))
        ref = support_vertices(a, lo, hi)
        worst = max(worst, abs(val - ref), abs(support_box_oracle(a, lo, hi) - ref))
    return Check("support: dual LP vs vertices", worst, 1e-8, worst <= 1e-8)


def check_two_bus_design(model: LinearModel, mu: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> list[Check]:
    cfg = DesignConfig()
    g1 = design_p1(model, mu, [True], cfg)
    ref1, _ = two_bus_design_grid(model, mu, cfg)
    got1 = design_objective(model, g1, mu, cfg.gamma)
    cfg2 = DesignConfig(robust=True)
    g2 = design_p2(model, UncertaintySet.box(lower, upper), [True], cfg2)
    verts = box_vertices(lower, upper)
    ref2, _ = two_bus_design_grid(model, verts, cfg2)
    got2 = design_objective(model, g2, verts, cfg2.gamma)
    return [
        Check("2-bus P1 vs grid oracle", abs(got1 - ref1), 1e-4, abs(got1 - ref1) <= 1e-4),
        Check("2-bus P2 vs grid/vertex oracle", abs(got2 - ref2), 1e-4, abs(got2 - ref2) <= 1e-4),
    ]


def check_fixed_point(model: LinearModel, gains: DroopGains, mu: np.ndarray, name: str) -> Check:
    e, hist = fixed_point_iterate(model, gains, mu, tol=1e-6, max_iter=200)
    ok = hist[-1] <= 1e-6 and len(hist) - 1 <= 200
    return Check(f"fixed point ({name})", hist[-1], 1e-6, ok)


def check_norm_chain(model: LinearModel, gains: DroopGains, name: str) -> Check:
    """``rho(HG) <= ||GH||_2 <= ||GH||_F`` and ``||GH||_2 <= ||G||_2 ||H||_2``."""
    st = check_stability(model, gains)
    g2 = float(np.linalg.norm(gains.G, 2))
    h2 = float(np.linalg.norm(model.H, 2))
    tol = 1e-9
    gaps = [st["rho"] - st["spec"], st["spec"] - st["frob"], st["spec"] - g2 * h2]
    worst = max(gaps)
    return Check(f"norm chain ({name})", worst, tol, worst <= tol and st["frob"] < 1.0)


MUTATIONS = ("dual-sign",)


def run_validation(seed: int = 0, mutate: str | None = None) -> list[Check]:
    """Every oracle check on the built-in fixtures.

    ``mutate="dual-sign"`` flips the sign of the support-function direction
    to show that the dual check catches a corrupted reformulation.
    """
    from .design import neuman_error_sweep, neuman_matrix_error_sweep
    from .grid import builtin_feeder, synth_scenario
    from .pipeline import design_window, fit_window_model
    from .uncertainty import build_box_set, forecast_mu

    if mutate is not None and mutate not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutate!r}; choose from {MUTATIONS}")
    rng = np.random.default_rng(seed)
    support_fn = support_dual
    if mutate == "dual-sign":
        support_fn = lambda a, u: support_dual(-np.asarray(a), u)  # noqa: E731

    checks = [check_projection(rng), check_support(rng, support_fn=support_fn)]

    two = builtin_feeder("two_bus")
    sc2 = synth_scenario(seed, "cloudy", two, 600)
    window = (0, sc2.steps)
    m2 = fit_window_model(two, sc2, window)
    zero = np.zeros(1)
    mu2 = forecast_mu(sc2, window, zero, zero, two).mu
    box2 = build_box_set(sc2, window, zero, zero, two)
    checks += check_two_bus_design(m2, mu2, box2.lower, box2.upper)

    big = builtin_feeder("ieee37")
    sc37 = synth_scenario(seed, "clear_sky", big, 900)
    zeros = np.zeros(big.n)
    mu37 = forecast_mu(sc37, (0, 900), zeros, zeros, big).mu
    alphas = np.linspace(0.0, 1.0, 11)
    model = None
    for name, cfg in (("37-bus P1", DesignConfig()), ("37-bus P2", DesignConfig(robust=True))):
        model, gains = design_window(big, sc37, (0, 900), cfg, model=model)
        checks.append(check_fixed_point(model, gains, mu37, name))
        checks.append(check_norm_chain(model, gains, name))
        vec = max(neuman_error_sweep(model, gains, mu37, alphas))
        mat = max(neuman_matrix_error_sweep(model, gains, alphas))
        checks.append(Check(f"Neuman error, forecast ({name})", vec, 0.25, None))
        checks.append(Check(f"Neuman error, matrix ({name})", mat, 0.25, None))
    return checks


def format_report(checks: list[Check]) -> str:
    head = f"{'check':<40} {'value':>12} {'tol':>10}  status"
    return "\n".join([head, "-" * len(head)] + [c.row() for c in checks])

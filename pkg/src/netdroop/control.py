"""Closed-loop simulation of projected droop controllers on the exact power flow.

At step ``k`` each inverter starts from its pre-adjustment setpoint (PV at
the maximum-power point, zero reactive power), adds ``g * dv(k-1)`` and
projects the candidate onto its feasible P-Q region. The network then
settles to the exact power-flow solution for the resulting injections.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .design import DroopGains, check_stability
from .grid import Feeder, Scenario
from .linearize import LinearModel
from .powerflow import PowerFlowError, solve_pf

V_LOW, V_HIGH = 0.95, 1.05
BOUND_TOL = 1e-9


def project_setpoint(p_tilde: float, q_tilde: float, p_avail: float, s_rating: float) -> tuple[float, float]:
    """Euclidean projection onto ``{0 <= P <= min(p_avail, S), P^2 + Q^2 <= S^2}``.

    The set is convex, so an infeasible point projects onto the boundary:
    the arc (radial scaling, when it lands inside the strip) or one of the
    two vertical edges ``P = 0`` and ``P = P_max``, whose endpoints are the
    corners. The nearest of those candidates is the projection.
    """
    s = float(s_rating)
    p_max = min(float(p_avail), s)
    x, y = float(p_tilde), float(q_tilde)
    # one circle test for both branches; mixing hypot with x*x + y*y lets a
    # point on the arc fall through to the edge candidates
    r = math.hypot(x, y)
    if 0.0 <= x <= p_max and r <= s:
        return x, y
    cands = [(0.0, min(max(y, -s), s))]
    q_edge = math.sqrt(max(s * s - p_max * p_max, 0.0))
    cands.append((p_max, min(max(y, -q_edge), q_edge)))
    if r > s:
        px, py = x * s / r, y * s / r
        if 0.0 <= px <= p_max:
            cands.append((px, py))
    return min(cands, key=lambda c: (c[0] - x) ** 2 + (c[1] - y) ** 2)


@dataclass(frozen=True)
class InverterState:
    """Pre-adjustment setpoint and limits of one inverter."""

    bus: int
    p_set: float
    q_set: float
    p_avail: float
    s_rating: float

    def feasible(self, tol: float = 1e-12) -> bool:
        p_max = min(self.p_avail, self.s_rating)
        return -tol <= self.p_set <= p_max + tol and self.p_set**2 + self.q_set**2 <= self.s_rating**2 + tol


@dataclass(frozen=True)
class StepResult:
    dp_tilde: np.ndarray
    dq_tilde: np.ndarray
    p_hat: np.ndarray
    q_hat: np.ndarray
    active: np.ndarray


def controller_step(states: Sequence[InverterState], dv_prev, gains: DroopGains) -> StepResult:
    """One proportional update with projection, for every inverter in ``states``.

    Arrays are indexed like ``states``; bus ``i`` (1-based) reads ``dv_prev[i-1]``
    and gains ``g[i-1]``.
    """
    dv_prev = np.asarray(dv_prev, dtype=float)
    if not np.all(np.isfinite(dv_prev)):
        raise ValueError("dv_prev must be finite")
    k = len(states)
    out = StepResult(np.zeros(k), np.zeros(k), np.zeros(k), np.zeros(k), np.zeros(k, dtype=bool))
    for i, st in enumerate(states):
        j = st.bus - 1
        dp = gains.g_p[j] * dv_prev[j]
        dq = gains.g_q[j] * dv_prev[j]
        pt, qt = st.p_set + dp, st.q_set + dq
        ph, qh = project_setpoint(pt, qt, st.p_avail, st.s_rating)
        out.dp_tilde[i], out.dq_tilde[i] = dp, dq
        out.p_hat[i], out.q_hat[i] = ph, qh
        out.active[i] = (ph != pt) or (qh != qt)
    return out


@dataclass(frozen=True)
class VoltVarCurve:
    """Piecewise-linear Q(V) characteristic; ``q_max`` as a fraction of the rating."""

    v1: float = 0.95
    v2: float = 0.98
    v3: float = 1.02
    v4: float = 1.05
    q_max: float = 0.44

    def __post_init__(self) -> None:
        if not (self.v1 < self.v2 <= self.v3 < self.v4):
            raise ValueError("breakpoints must satisfy v1 < v2 <= v3 < v4")
        if self.q_max < 0:
            raise ValueError("q_max must be non-negative")


def baseline_ieee1547(curve: VoltVarCurve, v: float, s_rating: float, p_set: float, q_max: float | None = None) -> float:
    """Volt/VAR setpoint from the standard-style curve with headroom-limited capability.

    ``q_max`` is in pu power; by default ``curve.q_max * s_rating``.
    """
    qm = curve.q_max * s_rating if q_max is None else q_max
    if qm > s_rating + 1e-12:
        raise ValueError("q_max cannot exceed the inverter rating")
    q_cap = min(qm, math.sqrt(max(s_rating**2 - p_set**2, 0.0)))
    if v <= curve.v1:
        return q_cap
    if v < curve.v2:
        return q_cap * (curve.v2 - v) / (curve.v2 - curve.v1)
    if v <= curve.v3:
        return 0.0
    if v < curve.v4:
        return -q_cap * (v - curve.v3) / (curve.v4 - curve.v3)
    return -q_cap


def baseline_sensitivity(model: LinearModel, target_gain: float, inverter_mask=None) -> DroopGains:
    """Inverse-sensitivity Volt/VAR heuristic: ``g_q,n = -target_gain / B_nn``, no Volt/Watt."""
    diag = np.diag(model.B).copy()
    mask = np.ones(model.n, bool) if inverter_mask is None else np.asarray(inverter_mask, bool)
    if np.any(diag[mask] == 0):
        raise ValueError("zero diagonal sensitivity at a controlled bus")
    if np.any(diag[mask] < 0):
        raise ValueError("diag(B) must be positive")
    g_q = np.zeros(model.n)
    g_q[mask] = -target_gain / diag[mask]
    return DroopGains(np.zeros(model.n), g_q, float("nan"), float("nan"), {"kind": "sensitivity", "target_gain": target_gain})


@dataclass(frozen=True)
class BoundInputs:
    H_norm: float
    G_norm: float
    r: float
    C: float
    delta: float


def theorem1_bound(inputs: BoundInputs) -> float:
    """Asymptotic bound on ``||dv(k)||_2`` for ``r = ||GH||_2 < 1``.

    ``(||H|| C + (1 - r + ||G|| ||H||) delta) / (1 - r)``
    """
    r = inputs.r
    if not r < 1.0:
        raise ValueError(f"bound undefined: r = ||GH||_2 = {r:.6f} >= 1")
    return (inputs.H_norm * inputs.C + (1.0 - r + inputs.G_norm * inputs.H_norm) * inputs.delta) / (1.0 - r)


@dataclass
class SimTrace:
    """Per-step record of a closed-loop run; ``summary`` is filled by :func:`summarize`."""

    start: int
    v: np.ndarray
    dv: np.ndarray
    p_tilde: np.ndarray
    q_tilde: np.ndarray
    p_hat: np.ndarray
    q_hat: np.ndarray
    proj_active: np.ndarray
    residual: np.ndarray
    dz_nc_norm: np.ndarray
    lin_error: np.ndarray
    summary: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.v.shape[0]

    @property
    def dv_norm(self) -> np.ndarray:
        return np.linalg.norm(self.dv, axis=1)

    def write_csv(self, path: str | Path, offset: int = 0) -> None:
        n = self.v.shape[1]
        header = ["k"] + [f"v_{i}" for i in range(1, n + 1)] + ["dv_norm"]
        header += [f"pset_{i}" for i in range(1, n + 1)] + [f"qset_{i}" for i in range(1, n + 1)]
        header += ["proj_active_count", "residual"]
        dvn = self.dv_norm
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.steps):
                row = [self.start + k + offset]
                row += [f"{x:.10f}" for x in self.v[k]] + [f"{dvn[k]:.10e}"]
                row += [f"{x:.10f}" for x in self.p_hat[k]] + [f"{x:.10f}" for x in self.q_hat[k]]
                row += [int(self.proj_active[k].sum()), f"{self.residual[k]:.3e}"]
                w.writerow(row)

    @classmethod
    def concatenate(cls, traces: Sequence[SimTrace]) -> SimTrace:
        cat = lambda name: np.concatenate([getattr(t, name) for t in traces])  # noqa: E731
        return cls(
            traces[0].start,
            cat("v"), cat("dv"), cat("p_tilde"), cat("q_tilde"), cat("p_hat"), cat("q_hat"),
            cat("proj_active"), cat("residual"), cat("dz_nc_norm"), cat("lin_error"),
        )


def oscillation_index(trace: SimTrace | np.ndarray) -> float:
    """Mean over buses of the per-transition total variation of the voltage."""
    v = trace.v if isinstance(trace, SimTrace) else np.asarray(trace, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] == 0:
        raise ValueError("empty trace")
    if v.shape[0] == 1:
        return 0.0
    return float(np.mean(np.abs(np.diff(v, axis=0)).sum(axis=0) / (v.shape[0] - 1)))


def parse_controller(controller: str | tuple) -> tuple[str, float]:
    """``"designed"``, ``"ieee1547"``, ``"sensitivity"``, ``"scaled:<offset>"`` or ``("scaled", offset)``."""
    if isinstance(controller, tuple):
        kind, val = controller
        return str(kind), float(val)
    if controller.startswith("scaled"):
        _, _, val = controller.partition(":")
        return "scaled", float(val) if val else -0.075
    if controller not in ("designed", "ieee1547", "sensitivity"):
        raise ValueError(f"unknown controller {controller!r}")
    return controller, 0.0


def effective_gains(controller: str | tuple, gains: DroopGains, model: LinearModel, feeder: Feeder, target_gain: float = 0.5) -> DroopGains | None:
    """Gains actually deployed for a controller choice (None for the Q(V) curve)."""
    kind, val = parse_controller(controller)
    if kind == "designed":
        return gains
    if kind == "scaled":
        return gains.shifted(val)
    if kind == "sensitivity":
        return baseline_sensitivity(model, target_gain, feeder.inverter_mask)
    return None


def simulate(
    feeder: Feeder,
    scenario: Scenario,
    gains: DroopGains,
    model: LinearModel,
    window: tuple[int, int] | None = None,
    controller: str | tuple = "designed",
    curve: VoltVarCurve = VoltVarCurve(),
    target_gain: float = 0.5,
    pf_tol: float = 1e-8,
) -> SimTrace:
    """Run the projected controllers in closed loop on the exact power flow.

    ``dv(k) = v(k) - v_bar`` with ``v_bar`` the model's reference voltages;
    ``dv`` before the first step comes from one uncontrolled solve.
    """
    start, stop = window if window is not None else (0, scenario.steps)
    if not (0 <= start < stop <= scenario.steps):
        raise ValueError(f"window {(start, stop)} outside scenario of {scenario.steps} steps")
    n = feeder.n
    kind, _ = parse_controller(controller)
    deployed = effective_gains(controller, gains, model, feeder, target_gain)
    inv = np.flatnonzero(feeder.inverter_mask)
    rating = feeder.s_rating
    z_bar = model.z_bar

    steps = stop - start
    v = np.zeros((steps, n))
    dv = np.zeros((steps, n))
    p_tilde = np.zeros((steps, n))
    q_tilde = np.zeros((steps, n))
    p_hat = np.zeros((steps, n))
    q_hat = np.zeros((steps, n))
    active = np.zeros((steps, n), dtype=bool)
    resid = np.zeros(steps)
    dz_norm = np.zeros(steps)
    lin_err = np.zeros(steps)

    def solve(k: int, p: np.ndarray, q: np.ndarray):
        try:
            return solve_pf(feeder, p, q, tol=pf_tol)
        except PowerFlowError as exc:
            raise PowerFlowError(f"simulate: step {k}: {exc}", exc.residual, exc.iterations) from exc

    pv0 = np.minimum(scenario.p_avail[start], rating)
    sol = solve(start, scenario.p_load[start] + pv0, scenario.q_load[start])
    v_prev = sol.v_mag
    dv_prev = v_prev - model.v_bar

    for i, k in enumerate(range(start, stop)):
        p_av = scenario.p_avail[k]
        pv_nom = np.minimum(p_av, rating)
        p_nom = scenario.p_load[k] + pv_nom
        q_nom = scenario.q_load[k]
        ph = np.zeros(n)
        qh = np.zeros(n)
        if deployed is not None:
            states = [InverterState(int(j) + 1, pv_nom[j], 0.0, p_av[j], rating[j]) for j in inv]
            step = controller_step(states, dv_prev, deployed)
            p_tilde[i, inv] = pv_nom[inv] + step.dp_tilde
            q_tilde[i, inv] = step.dq_tilde
            ph[inv], qh[inv] = step.p_hat, step.q_hat
            active[i, inv] = step.active
        else:
            for j in inv:
                qt = baseline_ieee1547(curve, v_prev[j], rating[j], pv_nom[j])
                p_tilde[i, j], q_tilde[i, j] = pv_nom[j], qt
                ph[j], qh[j] = project_setpoint(pv_nom[j], qt, p_av[j], rating[j])
                active[i, j] = (ph[j], qh[j]) != (pv_nom[j], qt)
        p_inj = scenario.p_load[k] + ph
        q_inj = scenario.q_load[k] + qh
        sol = solve(k, p_inj, q_inj)
        v[i] = sol.v_mag
        dv[i] = sol.v_mag - model.v_bar
        p_hat[i], q_hat[i] = ph, qh
        resid[i] = sol.residual
        dz_norm[i] = np.linalg.norm(np.concatenate([p_nom, q_nom]) - z_bar)
        lin_err[i] = np.linalg.norm(sol.v_mag - model.predict(p_inj, q_inj))
        v_prev, dv_prev = sol.v_mag, dv[i]

    trace = SimTrace(start, v, dv, p_tilde, q_tilde, p_hat, q_hat, active, resid, dz_norm, lin_err)
    trace.summary = summarize(trace, model, deployed, controller=kind)
    pv_nom = np.minimum(scenario.p_avail[start:stop], rating)[:, inv]
    trace.summary.update(_projection_checks(p_tilde[:, inv], q_tilde[:, inv], p_hat[:, inv], q_hat[:, inv], pv_nom,
                                            scenario.p_avail[start:stop][:, inv], rating[inv]))
    return trace


def _projection_checks(pt, qt, ph, qh, pv_nom, p_avail, rating) -> dict:
    """Worst setpoint infeasibility and worst growth of the projected adjustment over the candidate."""
    p_max = np.minimum(p_avail, rating)
    infeas = np.maximum.reduce([-ph, ph - p_max, ph**2 + qh**2 - rating**2, np.zeros_like(ph)])
    cand = np.sqrt(((pt - pv_nom) ** 2 + qt**2).sum(axis=1))
    proj = np.sqrt(((ph - pv_nom) ** 2 + qh**2).sum(axis=1))
    return {
        "max_infeasibility": float(infeas.max()) if infeas.size else 0.0,
        "max_containment_excess": float(np.max(proj - cand)) if proj.size else 0.0,
    }


def bound_inputs(model: LinearModel, gains: DroopGains, trace: SimTrace) -> BoundInputs:
    """Contraction-bound inputs for a run; delta covers both the declared sample set and every visited point."""
    H = model.H
    return BoundInputs(
        H_norm=float(np.linalg.norm(H, 2)),
        G_norm=float(np.linalg.norm(gains.G, 2)),
        r=float(np.linalg.norm(gains.G @ H, 2)),
        C=float(trace.dz_nc_norm.max()),
        delta=float(max(model.delta, trace.lin_error.max())),
    )


def summarize(trace: SimTrace, model: LinearModel, gains: DroopGains | None, controller: str = "designed") -> dict:
    v = trace.v
    dvn = trace.dv_norm
    tail = dvn[trace.steps // 2 :] if trace.steps > 1 else dvn
    over = v > V_HIGH
    under = v < V_LOW
    summary = {
        "controller": controller,
        "steps": trace.steps,
        "v_min": float(v.min()),
        "v_max": float(v.max()),
        "max_abs_dv": float(np.abs(trace.dv).max()),
        "max_dv_norm_tail": float(tail.max()),
        "violations_over": int(over.sum()),
        "violations_under": int(under.sum()),
        "violation_steps": int(np.any(over | under, axis=1).sum()),
        "oscillation_index": oscillation_index(trace),
        "max_residual": float(trace.residual.max()),
        "max_step_variability": float(np.max(np.abs(np.diff(trace.dz_nc_norm)))) if trace.steps > 1 else 0.0,
        "projection_active_steps": int(np.any(trace.proj_active, axis=1).sum()),
        "theorem1_bound": None,
        "bound_satisfied": None,
    }
    if gains is not None:
        st = check_stability(model, gains)
        bi = bound_inputs(model, gains, trace)
        summary["stability"] = st
        summary["bound_inputs"] = bi.__dict__
        if bi.r < 1.0:
            bound = theorem1_bound(bi)
            summary["theorem1_bound"] = bound
            summary["bound_satisfied"] = bool(tail.max() <= bound + BOUND_TOL)
        else:
            summary["bound_note"] = f"undefined: r = {bi.r:.4f} >= 1"
    return summary


def write_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

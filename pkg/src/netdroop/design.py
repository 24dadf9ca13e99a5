"""Droop-coefficient synthesis.

Both design problems are convex: the predicted steady-state deviation
``(I + HG) H mu`` and every row of ``A(G) = (I + HG) H`` are affine in the
diagonal gains, and ``||GH||_F`` is the 2-norm of the gains weighted by the
row norms of ``H``. The robust program replaces the worst case over the
polyhedron ``{D mu <= d}`` by the dual LP of each row, giving one conic
program solved in a single call.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cvxpy as cp
import numpy as np

from .linearize import LinearModel
from .uncertainty import Forecast, UncertaintySet

OBJECTIVES = ("voltage_dev", "participation", "sparsity")
ACTIVE_TOL = 1e-6
ZERO_SNAP = 1e-9


class DesignError(RuntimeError):
    pass


class StabilityError(ValueError):
    """Gains violate the spectral-radius precondition."""


@dataclass(frozen=True)
class DesignConfig:
    objective: str = "voltage_dev"
    gamma: float = 0.01
    epsilon0: float = 1e-3
    m_p: np.ndarray | float = 0.0
    m_q: np.ndarray | float = 0.0
    eta_p: float = 0.0
    eta_q: float = 0.0
    robust: bool = False
    volt_var_only: bool = False

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not (0.0 < self.epsilon0 < 1.0):
            raise ValueError(f"epsilon0 must lie in (0, 1), got {self.epsilon0}")
        if self.gamma < 0 or self.eta_p < 0 or self.eta_q < 0:
            raise ValueError("gamma and eta weights must be non-negative")
        if np.any(np.asarray(self.m_p) < 0) or np.any(np.asarray(self.m_q) < 0):
            raise ValueError("participation penalties must be non-negative")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "gamma": self.gamma,
            "epsilon0": self.epsilon0,
            "m_p": np.asarray(self.m_p, float).tolist(),
            "m_q": np.asarray(self.m_q, float).tolist(),
            "eta_p": self.eta_p,
            "eta_q": self.eta_q,
            "robust": self.robust,
            "volt_var_only": self.volt_var_only,
        }


@dataclass(frozen=True, eq=False)
class DroopGains:
    """Diagonals of the Volt/Watt (``g_p``) and Volt/VAR (``g_q``) gain matrices."""

    g_p: np.ndarray
    g_q: np.ndarray
    epsilon: float = 1.0
    objective_value: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        g_p = np.asarray(self.g_p, dtype=float).reshape(-1)
        g_q = np.asarray(self.g_q, dtype=float).reshape(-1)
        if g_p.shape != g_q.shape:
            raise ValueError("g_p and g_q must have the same length")
        object.__setattr__(self, "g_p", g_p)
        object.__setattr__(self, "g_q", g_q)

    @property
    def n(self) -> int:
        return self.g_p.size

    @property
    def G(self) -> np.ndarray:
        """Stacked 2N x N gain matrix ``[diag(g_p); diag(g_q)]``."""
        return np.vstack([np.diag(self.g_p), np.diag(self.g_q)])

    @classmethod
    def zeros(cls, n: int) -> DroopGains:
        return cls(np.zeros(n), np.zeros(n), 1.0, 0.0, {"kind": "zero"})

    def shifted(self, offset: float) -> DroopGains:
        """Shift every active coefficient by ``offset`` (steeper for offset < 0)."""
        g_p = np.where(np.abs(self.g_p) > ACTIVE_TOL, self.g_p + offset, 0.0)
        g_q = np.where(np.abs(self.g_q) > ACTIVE_TOL, self.g_q + offset, 0.0)
        return DroopGains(g_p, g_q, float("nan"), float("nan"), {**self.meta, "kind": "scaled", "offset": offset})

    def active_count(self, tol: float = ACTIVE_TOL) -> int:
        return int(np.sum(np.abs(self.g_p) > tol) + np.sum(np.abs(self.g_q) > tol))

    def to_dict(self) -> dict:
        return {
            "g_p": self.g_p.tolist(),
            "g_q": self.g_q.tolist(),
            "epsilon": self.epsilon,
            "objective_value": self.objective_value,
            "buses": [
                {"bus": i + 1, "g_p": float(gp), "g_q": float(gq)} for i, (gp, gq) in enumerate(zip(self.g_p, self.g_q))
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DroopGains:
        return cls(np.asarray(d["g_p"]), np.asarray(d["g_q"]), float(d["epsilon"]), float(d["objective_value"]), d.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> DroopGains:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _solve(prob: cp.Problem) -> str:
    last = None
    for solver, opts in (
        (cp.CLARABEL, {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10, "tol_ktratio": 1e-8}),
        (cp.CLARABEL, {}),
        (cp.SCS, {"eps": 1e-9, "max_iters": 200000}),
    ):
        try:
            with warnings.catch_warnings():
                # an inaccurate status just moves on to the next attempt
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=solver, **opts)
        except cp.error.SolverError as exc:
            last = exc
            continue
        if prob.status == cp.OPTIMAL:
            return solver
        if prob.status in (cp.INFEASIBLE, cp.UNBOUNDED):
            raise DesignError(f"design problem {prob.status}")
    raise DesignError(f"solver did not reach optimality (status {prob.status}, {last})")


class _Program:
    """Shared decision variables, margin constraint and objective extras."""

    def __init__(self, model: LinearModel, inverter_mask: Sequence[bool], config: DesignConfig):
        n = model.n
        mask = np.asarray(inverter_mask, dtype=bool).reshape(-1)
        if mask.shape != (n,):
            raise ValueError(f"inverter_mask must have length {n}")
        H = model.H
        if not np.all(np.isfinite(H)):
            raise ValueError("H must be finite")
        self.n, self.mask, self.H, self.config = n, mask, H, config
        self.idx = np.flatnonzero(mask)
        k = self.idx.size
        # a one-element placeholder pinned to zero keeps the program well formed without inverters
        self.xp = cp.Variable(max(k, 1), name="g_p", nonpos=True)
        self.xq = cp.Variable(max(k, 1), name="g_q", nonpos=True)
        self.eps = cp.Variable(name="epsilon")
        w = np.linalg.norm(H[self.idx], axis=1)
        self.constraints = [self.eps >= config.epsilon0, self.eps <= 1.0]
        if not k:
            self.constraints += [self.xp == 0, self.xq == 0]
        if config.volt_var_only:
            self.constraints.append(self.xp == 0)
        if k:
            self.constraints.append(cp.norm(cp.hstack([cp.multiply(w, self.xp), cp.multiply(w, self.xq)]), 2) <= 1 - self.eps)
        self.R_s = model.R[:, self.idx]
        self.B_s = model.B[:, self.idx]

    def hg_times(self, s: np.ndarray):
        """Affine expression for ``H G s`` (N-vector)."""
        if not self.idx.size:
            return np.zeros(self.n)
        sk = s[self.idx]
        return self.R_s @ cp.multiply(sk, self.xp) + self.B_s @ cp.multiply(sk, self.xq)

    def extras(self):
        c = self.config
        terms = -c.gamma * self.eps
        if not self.idx.size:
            return terms
        if c.objective == "participation":
            m_p = np.broadcast_to(np.asarray(c.m_p, float), (self.n,))[self.idx]
            m_q = np.broadcast_to(np.asarray(c.m_q, float), (self.n,))[self.idx]
            terms = terms + cp.sum(cp.multiply(m_p, cp.square(self.xp))) + cp.sum(cp.multiply(m_q, cp.square(self.xq)))
        elif c.objective == "sparsity":
            terms = terms - c.eta_p * cp.sum(self.xp) - c.eta_q * cp.sum(self.xq)
        return terms

    def gains(self, prob: cp.Problem, solver: str, elapsed: float, kind: str) -> DroopGains:
        g_p = np.zeros(self.n)
        g_q = np.zeros(self.n)
        if self.idx.size:
            g_p[self.idx] = np.minimum(self.xp.value, 0.0)
            g_q[self.idx] = np.minimum(self.xq.value, 0.0)
        if self.config.volt_var_only:
            g_p[:] = 0.0
        g_p[g_p > -ZERO_SNAP] = 0.0
        g_q[g_q > -ZERO_SNAP] = 0.0
        # feasibility restoration against solver round-off
        w = np.linalg.norm(self.H, axis=1)
        frob = float(np.sqrt(np.sum(w**2 * (g_p**2 + g_q**2))))
        cap = 1.0 - self.config.epsilon0
        if frob > cap:
            g_p *= cap / frob
            g_q *= cap / frob
            frob = cap
        eps = float(min(float(self.eps.value), 1.0 - frob, 1.0))
        eps = max(eps, self.config.epsilon0)
        meta = {
            "kind": kind,
            "config": self.config.to_dict(),
            "solver": str(solver),
            "status": prob.status,
            "solve_time_s": elapsed,
            "frobenius": frob,
        }
        return DroopGains(g_p, g_q, eps, float(prob.value), meta)


def design_p1(model: LinearModel, forecast: Forecast | np.ndarray, inverter_mask, config: DesignConfig = DesignConfig()) -> DroopGains:
    """Certainty-equivalent design for a single forecast ``mu``.

    Minimizes ``||e||_inf - gamma*eps`` (plus the configured variant term)
    with ``e = (I + HG) H mu``, ``||GH||_F <= 1 - eps``, ``eps0 <= eps <= 1``
    and ``G <= 0`` restricted to inverter buses.
    """
    if config.robust:
        raise ValueError("design_p1 is the nominal design; use design_p2 for robust=True")
    mu = np.asarray(forecast.mu if isinstance(forecast, Forecast) else forecast, dtype=float).reshape(-1)
    if mu.shape != (2 * model.n,) or not np.all(np.isfinite(mu)):
        raise ValueError(f"mu must be a finite vector of length {2 * model.n}")
    prog = _Program(model, inverter_mask, config)
    s = prog.H @ mu
    e = s + prog.hg_times(s)
    prob = cp.Problem(cp.Minimize(cp.norm(e, "inf") + prog.extras()), prog.constraints)
    t0 = time.perf_counter()
    solver = _solve(prob)
    gains = prog.gains(prob, solver, time.perf_counter() - t0, "p1")
    e_val = s + model.R @ (gains.g_p * s) + model.B @ (gains.g_q * s)
    gains.meta["e_inf"] = float(np.max(np.abs(e_val))) if e_val.size else 0.0
    return gains


def design_p2(model: LinearModel, uset: UncertaintySet, inverter_mask, config: DesignConfig = DesignConfig(robust=True)) -> DroopGains:
    """Robust design over a polyhedral uncertainty set.

    Epigraph form ``min t - gamma*eps`` where, for every row ``a_i(G)`` of
    ``A(G) = H + HGH``, dual multipliers ``lam_hi_i, lam_lo_i >= 0`` certify
    ``max_U a_i^T mu <= t`` and ``max_U -a_i^T mu <= t`` via
    ``D^T lam_hi_i = a_i``, ``D^T lam_lo_i = -a_i``, ``d^T lam <= t``.
    """
    if uset.dim != 2 * model.n:
        raise ValueError(f"uncertainty set dimension {uset.dim} != {2 * model.n}")
    prog = _Program(model, inverter_mask, config)
    H = prog.H
    n, m = model.n, uset.D.shape[0]
    if prog.idx.size:
        H_s = H[prog.idx]
        A = H + prog.R_s @ cp.diag(prog.xp) @ H_s + prog.B_s @ cp.diag(prog.xq) @ H_s
    else:
        A = H
    t = cp.Variable(name="t")
    lam_hi = cp.Variable((n, m), nonneg=True)
    lam_lo = cp.Variable((n, m), nonneg=True)
    D, d = uset.D, uset.d
    cons = prog.constraints + [
        lam_hi @ D == A,
        lam_lo @ D == -A,
        lam_hi @ d <= t,
        lam_lo @ d <= t,
    ]
    prob = cp.Problem(cp.Minimize(t + prog.extras()), cons)
    t0 = time.perf_counter()
    solver = _solve(prob)
    gains = prog.gains(prob, solver, time.perf_counter() - t0, "p2")
    gains.meta["t"] = float(t.value)
    return gains


def hg_matrix(model: LinearModel, gains: DroopGains) -> np.ndarray:
    """``HG = R diag(g_p) + B diag(g_q)`` (N x N)."""
    return model.R * gains.g_p[None, :] + model.B * gains.g_q[None, :]


def check_stability(model: LinearModel, gains: DroopGains) -> dict:
    """Frobenius and spectral norms of ``GH`` and the spectral radius of ``HG``."""
    if gains.n != model.n:
        raise ValueError("gains and model dimensions differ")
    GH = gains.G @ model.H
    frob = float(np.linalg.norm(GH, "fro"))
    spec = float(np.linalg.norm(GH, 2))
    rho = float(np.max(np.abs(np.linalg.eigvals(hg_matrix(model, gains)))))
    eps = gains.epsilon if np.isfinite(gains.epsilon) else 0.0
    return {"frob": frob, "spec": spec, "rho": rho, "margin_ok": bool(frob <= 1 - eps + 1e-9)}


def neuman_error_sweep(model: LinearModel, gains: DroopGains, mu, alphas: Sequence[float]) -> list[float]:
    """Relative error of ``(I + HG')H mu`` against ``(I - HG')^{-1} H mu`` for ``G' = alpha G``."""
    mu = np.asarray(mu, dtype=float)
    s = model.H @ mu
    hg = hg_matrix(model, gains)
    eye = np.eye(model.n)
    out = []
    for alpha in alphas:
        m = alpha * hg
        exact = np.linalg.solve(eye - m, s)
        approx = s + m @ s
        num = float(np.linalg.norm(exact - approx))
        den = float(np.linalg.norm(exact))
        out.append(0.0 if num == 0.0 else num / den)
    return out


def neuman_matrix_error_sweep(model: LinearModel, gains: DroopGains, alphas: Sequence[float]) -> list[float]:
    """Relative Frobenius error between the matrices ``(I - HG')^{-1}`` and ``I + HG'``."""
    hg = hg_matrix(model, gains)
    eye = np.eye(model.n)
    out = []
    for alpha in alphas:
        exact = np.linalg.inv(eye - alpha * hg)
        out.append(float(np.linalg.norm(exact - (eye + alpha * hg)) / np.linalg.norm(exact)))
    return out


def fixed_point_voltage(model: LinearModel, gains: DroopGains, mu) -> np.ndarray:
    """Exact steady state ``e = (I - HG)^{-1} H mu`` of ``e <- HG e + H mu``."""
    hg = hg_matrix(model, gains)
    rho = float(np.max(np.abs(np.linalg.eigvals(hg)))) if hg.size else 0.0
    if rho >= 1.0:
        raise StabilityError(f"spectral radius of HG is {rho:.4f} >= 1; no attracting fixed point")
    return np.linalg.solve(np.eye(model.n) - hg, model.H @ np.asarray(mu, dtype=float))


def fixed_point_iterate(model: LinearModel, gains: DroopGains, mu, tol: float = 1e-6, max_iter: int = 200) -> tuple[np.ndarray, list[float]]:
    """Run ``e <- HG e + H mu`` from zero; returns the final iterate and the error history
    against the exact fixed point (inf-norm)."""
    target = fixed_point_voltage(model, gains, mu)
    hg = hg_matrix(model, gains)
    s = model.H @ np.asarray(mu, dtype=float)
    e = np.zeros(model.n)
    hist = [float(np.max(np.abs(e - target))) if e.size else 0.0]
    for _ in range(max_iter):
        if hist[-1] <= tol:
            break
        e = hg @ e + s
        hist.append(float(np.max(np.abs(e - target))))
    if hist[-1] > tol:
        warnings.warn(f"fixed-point iteration stopped at error {hist[-1]:.2e} after {max_iter} steps")
    return e, hist

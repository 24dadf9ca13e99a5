"""Forecasts and polyhedral uncertainty sets for non-controllable injections.

Vectors here are stacked deviations ``[dp; dq]`` (length 2N) from the
reference point of a linear model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .grid import Feeder, Scenario, as_vector, net_injection

LP_TOL = 1e-9


class UncertaintyError(ValueError):
    pass


@dataclass(frozen=True)
class Forecast:
    mu: np.ndarray
    window: tuple[int, int]

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.mu)):
            raise UncertaintyError("forecast mu must be finite")


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """The polyhedron ``{mu : D mu <= d}``; box sets also carry their bounds."""

    D: np.ndarray
    d: np.ndarray
    kind: str = "general"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.D.shape[1]

    @classmethod
    def box(cls, lower, upper) -> UncertaintySet:
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise UncertaintyError("lower/upper shape mismatch")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise UncertaintyError("box bounds must be finite")
        if np.any(lower > upper):
            raise UncertaintyError("box is empty (lower > upper)")
        eye = np.eye(lower.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]), "box", lower, upper)

    @classmethod
    def polytope(cls, D, d) -> UncertaintySet:
        """General polyhedron; checked nonempty and bounded."""
        D = np.atleast_2d(np.asarray(D, dtype=float))
        d = np.asarray(d, dtype=float).reshape(-1)
        if D.shape[0] != d.size:
            raise UncertaintyError("D and d row counts differ")
        m, k = D.shape
        feas = linprog(np.zeros(k), A_ub=D, b_ub=d, bounds=[(None, None)] * k, method="highs")
        if feas.status != 0:
            raise UncertaintyError("uncertainty set is empty")
        for j in range(k):
            for sign in (1.0, -1.0):
                c = np.zeros(k)
                c[j] = -sign
                r = linprog(c, A_ub=D, b_ub=d, bounds=[(None, None)] * k, method="highs")
                if r.status == 3:
                    raise UncertaintyError(f"uncertainty set is unbounded along coordinate {j}")
        return cls(D, d, "general")

    def contains(self, mu, tol: float = 1e-12) -> bool:
        return bool(np.all(self.D @ np.asarray(mu, float) <= self.d + tol))

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {"kind": "general", "D": self.D.tolist(), "d": self.d.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> UncertaintySet:
        if data["kind"] == "box":
            return cls.box(data["lower"], data["upper"])
        return cls.polytope(data["D"], data["d"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


def _deviations(scenario: Scenario, window: tuple[int, int], p_bar, q_bar, feeder: Feeder | None) -> np.ndarray:
    start, stop = window
    if not (0 <= start < stop <= scenario.steps):
        raise UncertaintyError(f"window {window} is empty or outside 0..{scenario.steps}")
    n = scenario.n
    p_bar = as_vector(p_bar, n, "p_bar")
    q_bar = as_vector(q_bar, n, "q_bar")
    if feeder is None:
        p = scenario.p_load[start:stop]
        q = scenario.q_load[start:stop]
    else:
        p, q = net_injection(scenario, feeder, slice(start, stop))
    return np.hstack([p - p_bar, q - q_bar])


def forecast_mu(
    scenario: Scenario, window: tuple[int, int], p_bar, q_bar, feeder: Feeder | None = None
) -> Forecast:
    """Window average of the stacked deviations from ``(p_bar, q_bar)``.

    With ``feeder`` given, PV at its maximum-power point is counted as part of
    the uncontrolled injection; otherwise loads only.
    """
    dev = _deviations(scenario, window, p_bar, q_bar, feeder)
    return Forecast(dev.mean(axis=0), (int(window[0]), int(window[1])))


def build_box_set(
    scenario: Scenario, window: tuple[int, int], p_bar, q_bar, feeder: Feeder | None = None
) -> UncertaintySet:
    """Componentwise min/max box of the stacked deviations over the window."""
    dev = _deviations(scenario, window, p_bar, q_bar, feeder)
    return UncertaintySet.box(dev.min(axis=0), dev.max(axis=0))


def support_dual(a, uset: UncertaintySet) -> tuple[float, np.ndarray]:
    """``max_{mu in U} a^T mu`` through its dual LP ``min d^T lam, D^T lam = a, lam >= 0``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != uset.dim:
        raise ValueError(f"a has length {a.size}, set dimension is {uset.dim}")
    m = uset.D.shape[0]
    res = linprog(
        uset.d,
        A_eq=uset.D.T,
        b_eq=a,
        bounds=[(0, None)] * m,
        method="highs",
        options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL},
    )
    if res.status == 2:
        raise UncertaintyError("dual LP infeasible: uncertainty set unbounded in direction a")
    if res.status != 0:
        raise UncertaintyError(f"dual LP failed: {res.message}")
    return float(res.fun), np.asarray(res.x)


def support_box_oracle(a, lower, upper) -> float:
    """Exact support function of a box: pick ``upper`` where ``a > 0``, ``lower`` otherwise."""
    a = np.asarray(a, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise UncertaintyError("lower > upper")
    return float(np.sum(np.where(a > 0, a * upper, a * lower)))


def box_vertices(lower, upper) -> np.ndarray:
    """All 2^k vertices of a box (small k only)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    k = lower.size
    if k > 16:
        raise ValueError("too many vertices to enumerate")
    bits = (np.arange(2**k)[:, None] >> np.arange(k)) & 1
    return np.where(bits == 1, upper, lower)

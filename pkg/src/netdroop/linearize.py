"""Affine voltage model v ~ R p + B q + a and its empirical error bound."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Feeder, Scenario, as_vector, net_injection
from .powerflow import PowerFlowError, solve_pf

LINEARIZE_PF_TOL = 1e-13


class RegressionError(ValueError):
    """Sample set cannot identify the linear model."""


@dataclass
class LinearModel:
    """Affine surrogate of the power-flow map around a reference point.

    ``delta`` is an empirical bound on ``||F - F_L||_2`` measured over a
    declared sample set (see :func:`estimate_delta`); it starts at 0.
    """

    R: np.ndarray
    B: np.ndarray
    a: np.ndarray
    p_bar: np.ndarray
    q_bar: np.ndarray
    v_bar: np.ndarray
    delta: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def H(self) -> np.ndarray:
        return np.hstack([self.R, self.B])

    @property
    def z_bar(self) -> np.ndarray:
        return np.concatenate([self.p_bar, self.q_bar])

    def predict(self, p, q) -> np.ndarray:
        return self.R @ np.asarray(p, float) + self.B @ np.asarray(q, float) + self.a

    def rebase(self, p_ref, q_ref) -> LinearModel:
        """Same affine map, with the reference point moved to ``(p_ref, q_ref)``.

        ``v_bar`` becomes ``F_L(p_ref, q_ref)``, so the exactness invariant
        holds by construction.
        """
        p_ref = as_vector(p_ref, self.n, "p_ref")
        q_ref = as_vector(q_ref, self.n, "q_ref")
        meta = dict(self.meta)
        meta.setdefault("linearization_p", self.p_bar.tolist())
        meta.setdefault("linearization_q", self.q_bar.tolist())
        return LinearModel(self.R, self.B, self.a, p_ref, q_ref, self.predict(p_ref, q_ref), self.delta, meta)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "R": self.R.tolist(),
            "B": self.B.tolist(),
            "a": self.a.tolist(),
            "p_bar": self.p_bar.tolist(),
            "q_bar": self.q_bar.tolist(),
            "v_bar": self.v_bar.tolist(),
            "delta": self.delta,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LinearModel:
        arr = lambda k: np.asarray(d[k], dtype=float)  # noqa: E731
        return cls(arr("R"), arr("B"), arr("a"), arr("p_bar"), arr("q_bar"), arr("v_bar"), float(d["delta"]), d.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> LinearModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def linearize(feeder: Feeder, p_bar, q_bar, h: float = 1e-5, pf_tol: float = LINEARIZE_PF_TOL) -> LinearModel:
    """Central finite-difference linearization of the exact power flow.

    Column ``j`` of ``R`` (``B``) is ``(F(p + h e_j) - F(p - h e_j)) / 2h`` for
    active (reactive) injections; ``a`` is then chosen so that the model is
    exact at ``(p_bar, q_bar)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    n = feeder.n
    p_bar = as_vector(p_bar, n, "p_bar")
    q_bar = as_vector(q_bar, n, "q_bar")
    try:
        v_bar = solve_pf(feeder, p_bar, q_bar, tol=pf_tol).v_mag
    except PowerFlowError as exc:
        raise PowerFlowError(f"linearize: power flow failed at the linearization point: {exc}", exc.residual, exc.iterations) from exc
    R = np.empty((n, n))
    B = np.empty((n, n))
    for mat, which in ((R, "p"), (B, "q")):
        for j in range(n):
            cols = []
            for sign in (+1, -1):
                dp = p_bar.copy()
                dq = q_bar.copy()
                (dp if which == "p" else dq)[j] += sign * h
                try:
                    cols.append(solve_pf(feeder, dp, dq, tol=pf_tol).v_mag)
                except PowerFlowError as exc:
                    raise PowerFlowError(
                        f"linearize: power flow failed perturbing {which}_{j + 1} by {'+' if sign > 0 else '-'}h: {exc}",
                        exc.residual,
                        exc.iterations,
                    ) from exc
            mat[:, j] = (cols[0] - cols[1]) / (2 * h)
    a = v_bar - R @ p_bar - B @ q_bar
    return LinearModel(R, B, a, p_bar, q_bar, v_bar, 0.0, {"method": "central_difference", "h": h})


def estimate_delta(
    model: LinearModel, feeder: Feeder, samples: Iterable[tuple[np.ndarray, np.ndarray]], pf_tol: float = LINEARIZE_PF_TOL
) -> float:
    """Max over samples of ``||F(p, q) - F_L(p, q)||_2``; also stored in ``model.delta``."""
    worst = 0.0
    count = 0
    for i, (p, q) in enumerate(samples):
        try:
            v = solve_pf(feeder, p, q, tol=pf_tol).v_mag
        except PowerFlowError as exc:
            raise PowerFlowError(f"estimate_delta: sample {i}: {exc}", exc.residual, exc.iterations) from exc
        worst = max(worst, float(np.linalg.norm(v - model.predict(p, q))))
        count += 1
    model.delta = worst
    model.meta["delta_samples"] = count
    model.meta["delta_kind"] = "empirical"
    return worst


def delta_samples(
    p_lo: np.ndarray, p_hi: np.ndarray, q_lo: np.ndarray, q_hi: np.ndarray, n_random: int = 100, seed: int = 0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Range corners (all-low, all-high, and the two mixed p/q corners) plus uniform interior points."""
    rng = np.random.default_rng(seed)
    out = [(p_lo, q_lo), (p_hi, q_hi), (p_lo, q_hi), (p_hi, q_lo)]
    for _ in range(n_random):
        out.append((rng.uniform(p_lo, p_hi), rng.uniform(q_lo, q_hi)))
    return out


def scenario_delta_samples(
    scenario: Scenario, feeder: Feeder, window: tuple[int, int] | None = None, n_random: int = 100, seed: int = 0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Default sample set covering the operating range of a scenario window.

    The range spans the uncontrolled injections (loads plus PV at maximum
    power) and the controllable extremes: full curtailment and full reactive
    capability of every inverter.
    """
    sel = slice(*window) if window else slice(None)
    p, q = net_injection(scenario, feeder, sel)
    loads = scenario.p_load[sel]
    s = feeder.s_rating
    p_lo = loads.min(axis=0)
    p_hi = p.max(axis=0)
    q_lo = q.min(axis=0) - s
    q_hi = q.max(axis=0) + s
    return delta_samples(p_lo, p_hi, q_lo, q_hi, n_random, seed)


def fit_linear_regression(samples: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> LinearModel:
    """Least-squares fit of ``[R B a]`` from ``(p, q, v_mag)`` observations."""
    samples = list(samples)
    if not samples:
        raise RegressionError("no samples")
    n = len(np.asarray(samples[0][0]).reshape(-1))
    if len(samples) < 2 * n + 1:
        raise RegressionError(f"need at least {2 * n + 1} samples for {n} buses, got {len(samples)}")
    X = np.array([np.concatenate([np.ravel(p), np.ravel(q), [1.0]]) for p, q, _ in samples])
    V = np.array([np.ravel(v) for _, _, v in samples])
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise RegressionError(f"regressor matrix is rank deficient ({rank} < {X.shape[1]})")
    coef, *_ = np.linalg.lstsq(X, V, rcond=None)
    R = coef[:n].T
    B = coef[n : 2 * n].T
    p_bar = X[:, :n].mean(axis=0)
    q_bar = X[:, n : 2 * n].mean(axis=0)
    v_bar = V.mean(axis=0)
    a = v_bar - R @ p_bar - B @ q_bar
    fitted = X[:, :n] @ R.T + X[:, n : 2 * n] @ B.T + a
    resid = float(np.max(np.linalg.norm(V - fitted, axis=1)))
    return LinearModel(R, B, a, p_bar, q_bar, v_bar, 0.0, {"method": "least_squares", "fit_residual": resid})

"""Exact AC power flow for radial single-phase feeders.

The primary solver is a backward/forward sweep on complex voltages; a polar
Newton-Raphson solve on the bus admittance matrix is kept as an independent
cross-check. Both start from a flat profile at the slack voltage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Feeder, as_vector

DEFAULT_TOL = 1e-8
COLLAPSE_FLOOR = 0.5


class PowerFlowError(RuntimeError):
    """The power flow did not converge."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class VoltageCollapseError(PowerFlowError):
    """A voltage magnitude fell below the collapse floor (infeasible loading)."""


@dataclass(frozen=True)
class PfSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    iterations: int
    residual: float

    @property
    def v_complex(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


def _mismatch(feeder: Feeder, v_full: np.ndarray, s_inj: np.ndarray) -> np.ndarray:
    s_calc = v_full * np.conj(feeder.ybus @ v_full)
    return s_inj - s_calc[1:]


def residual(feeder: Feeder, v_mag, v_ang, p, q) -> float:
    """Max apparent-power mismatch over the non-slack buses."""
    n = feeder.n
    v = as_vector(v_mag, n, "v_mag") * np.exp(1j * as_vector(v_ang, n, "v_ang"))
    s = as_vector(p, n, "p") + 1j * as_vector(q, n, "q")
    v_full = np.concatenate([[feeder.v_slack + 0j], v])
    return float(np.max(np.abs(_mismatch(feeder, v_full, s))))


def solve_pf(
    feeder: Feeder,
    p,
    q,
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
    collapse_floor: float = COLLAPSE_FLOOR,
) -> PfSolution:
    """Backward/forward sweep power flow.

    Args:
        feeder: radial network.
        p, q: N-vectors of net injections [pu], positive = injection.
        tol: max apparent-power mismatch accepted at any non-slack bus.
        max_iter: sweep limit.
        collapse_floor: a magnitude below this raises VoltageCollapseError.

    Raises:
        PowerFlowError: no convergence within ``max_iter`` sweeps.
        VoltageCollapseError: some |v| dropped below ``collapse_floor``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = feeder.n
    s = as_vector(p, n, "p") + 1j * as_vector(q, n, "q")
    t = feeder.subtree
    tt = t.T
    z = feeder.branch_impedance
    v0 = complex(feeder.v_slack)
    v = np.full(n, v0, dtype=complex)
    v_full = np.empty(n + 1, dtype=complex)
    v_full[0] = v0
    res = float("inf")
    for it in range(1, max_iter + 1):
        i_branch = -(t @ np.conj(s / v))
        v = v0 - tt @ (z * i_branch)
        vm = np.abs(v)
        if not np.all(np.isfinite(vm)) or vm.min() < collapse_floor:
            raise VoltageCollapseError(
                f"voltage collapse: min |v| = {np.nanmin(vm):.4f} pu below floor {collapse_floor}",
                iterations=it,
            )
        v_full[1:] = v
        res = float(np.max(np.abs(_mismatch(feeder, v_full, s))))
        if res <= tol:
            return PfSolution(vm, np.angle(v), it, res)
    raise PowerFlowError(f"sweep did not converge in {max_iter} iterations (residual {res:.3e})", res, max_iter)


def solve_pf_newton(
    feeder: Feeder,
    p,
    q,
    tol: float = DEFAULT_TOL,
    max_iter: int = 30,
    collapse_floor: float = COLLAPSE_FLOOR,
) -> PfSolution:
    """Polar Newton-Raphson on the full admittance matrix (cross-check solver)."""
    n = feeder.n
    s = as_vector(p, n, "p") + 1j * as_vector(q, n, "q")
    y = feeder.ybus
    vm = np.full(n + 1, float(feeder.v_slack))
    va = np.zeros(n + 1)
    res = float("inf")
    for it in range(0, max_iter + 1):
        v = vm * np.exp(1j * va)
        mis = _mismatch(feeder, v, s)
        res = float(np.max(np.abs(mis)))
        if res <= tol:
            return PfSolution(vm[1:].copy(), va[1:].copy(), it, res)
        if it == max_iter:
            break
        ibus = y @ v
        dva = 1j * np.diag(v) @ np.conj(np.diag(ibus) - y @ np.diag(v))
        dvm = np.diag(v) @ np.conj(y @ np.diag(v / vm)) + np.conj(np.diag(ibus)) @ np.diag(v / vm)
        j11, j12 = dva[1:, 1:], dvm[1:, 1:]
        jac = np.block([[j11.real, j12.real], [j11.imag, j12.imag]])
        rhs = np.concatenate([mis.real, mis.imag])
        dx = np.linalg.solve(jac, rhs)
        va[1:] += dx[:n]
        vm[1:] += dx[n:]
        if not np.all(np.isfinite(vm)) or vm[1:].min() < collapse_floor:
            raise VoltageCollapseError(
                f"voltage collapse: min |v| = {np.nanmin(vm[1:]):.4f} pu below floor {collapse_floor}",
                iterations=it + 1,
            )
    raise PowerFlowError(f"Newton did not converge in {max_iter} iterations (residual {res:.3e})", res, max_iter)


def voltage_magnitudes(feeder: Feeder, p, q, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Shorthand for ``solve_pf(...).v_mag`` -- the map F(p, q)."""
    return solve_pf(feeder, p, q, tol=tol).v_mag

"""Feeder, inverter fleet and scenario data model.

All quantities are stored in per-unit on the feeder's ``(s_base, v_base)``.
Injections follow the generator convention: positive values inject power into
the network, loads appear as negative ``p``/``q`` entries.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np


class FeederError(ValueError):
    """Raised when a feeder file is malformed or violates an invariant."""


class ScenarioError(ValueError):
    """Raised when a scenario is malformed or inconsistent with its feeder."""


@dataclass(frozen=True)
class InverterSpec:
    s_rating: float
    node: int

    def __post_init__(self) -> None:
        if not (self.s_rating > 0 and math.isfinite(self.s_rating)):
            raise FeederError(f"inverter at bus {self.node}: s_rating must be > 0, got {self.s_rating}")


@dataclass(frozen=True)
class Bus:
    """A network node.

    ``p_load``/``q_load`` are optional nominal injections (negative for
    consumption) used by the scenario generator as the base load level.
    """

    index: int
    inverter: InverterSpec | None = None
    p_load: float = 0.0
    q_load: float = 0.0
    name: str | None = None

    @property
    def has_inverter(self) -> bool:
        return self.inverter is not None


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True, eq=False)
class Feeder:
    """Immutable radial distribution feeder; bus 0 is the substation (slack)."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    v_slack: float = 1.0
    s_base: float = 1000.0
    v_base: float = 4.8
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        _validate_feeder(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Feeder):
            return NotImplemented
        return (
            self.buses == other.buses
            and self.lines == other.lines
            and self.v_slack == other.v_slack
            and self.s_base == other.s_base
            and self.v_base == other.v_base
        )

    __hash__ = object.__hash__

    @property
    def n(self) -> int:
        """Number of non-slack buses."""
        return len(self.buses) - 1

    @cached_property
    def parent(self) -> np.ndarray:
        """parent[i] is the upstream bus of bus i (parent[0] = -1)."""
        par = np.full(self.n + 1, -1, dtype=int)
        for ln in self._oriented_lines:
            par[ln.to_bus] = ln.from_bus
        return par

    @cached_property
    def _oriented_lines(self) -> tuple[Line, ...]:
        # Orient every line away from the substation.
        adj: dict[int, list[tuple[int, Line]]] = {b.index: [] for b in self.buses}
        for ln in self.lines:
            adj[ln.from_bus].append((ln.to_bus, ln))
            adj[ln.to_bus].append((ln.from_bus, ln))
        out: list[Line] = []
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v, ln in sorted(adj[u], key=lambda t: t[0]):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
                    out.append(Line(u, v, ln.r, ln.x))
        return tuple(out)

    @cached_property
    def branch_impedance(self) -> np.ndarray:
        """Series impedance of the line feeding bus i, for i = 1..N (length N)."""
        z = np.zeros(self.n, dtype=complex)
        for ln in self._oriented_lines:
            z[ln.to_bus - 1] = complex(ln.r, ln.x)
        return z

    @cached_property
    def subtree(self) -> np.ndarray:
        """N x N matrix, ``T[b, j] = 1`` iff bus j+1 lies downstream of (or is) bus b+1.

        Branch currents follow from injections as ``I_branch = -T @ I_inj``; the
        transpose maps branch drops to cumulative drops along each path.
        """
        t = np.zeros((self.n, self.n))
        par = self.parent
        for j in range(1, self.n + 1):
            b = j
            while b != 0:
                t[b - 1, j - 1] = 1.0
                b = par[b]
        return t

    @cached_property
    def ybus(self) -> np.ndarray:
        y = np.zeros((self.n + 1, self.n + 1), dtype=complex)
        for ln in self.lines:
            yl = 1.0 / complex(ln.r, ln.x)
            i, j = ln.from_bus, ln.to_bus
            y[i, i] += yl
            y[j, j] += yl
            y[i, j] -= yl
            y[j, i] -= yl
        return y

    @cached_property
    def depth(self) -> np.ndarray:
        """Number of lines between the substation and each bus 1..N."""
        return self.subtree.sum(axis=0).astype(int)

    @property
    def inverter_mask(self) -> np.ndarray:
        """Boolean N-vector, True at buses 1..N hosting an inverter."""
        return np.array([b.has_inverter for b in self.buses[1:]], dtype=bool)

    @property
    def s_rating(self) -> np.ndarray:
        """Inverter ratings as an N-vector (0 where no inverter)."""
        return np.array([b.inverter.s_rating if b.inverter else 0.0 for b in self.buses[1:]])

    @property
    def nominal_load(self) -> tuple[np.ndarray, np.ndarray]:
        p = np.array([b.p_load for b in self.buses[1:]])
        q = np.array([b.q_load for b in self.buses[1:]])
        return p, q

    def to_dict(self) -> dict:
        """Serialize to the JSON feeder schema (per-unit line data)."""
        buses = []
        for b in self.buses:
            entry: dict = {"index": b.index}
            if b.name is not None:
                entry["name"] = b.name
            if b.inverter is not None:
                entry["inverter"] = {"s_rating_pu": b.inverter.s_rating}
            if b.p_load or b.q_load:
                entry["load"] = {"p_pu": b.p_load, "q_pu": b.q_load}
            buses.append(entry)
        return {
            "name": self.name,
            "s_base_kva": self.s_base,
            "v_base_kv": self.v_base,
            "v_slack_pu": self.v_slack,
            "buses": buses,
            "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r_pu": ln.r, "x_pu": ln.x} for ln in self.lines],
        }


def _validate_feeder(f: Feeder) -> None:
    if not (math.isfinite(f.v_slack) and f.v_slack > 0):
        raise FeederError(f"v_slack must be positive, got {f.v_slack}")
    if not (f.s_base > 0 and f.v_base > 0):
        raise FeederError("s_base and v_base must be positive")
    seen: set[int] = set()
    for b in f.buses:
        if b.index in seen:
            raise FeederError(f"duplicate bus index {b.index}")
        seen.add(b.index)
    n_bus = len(f.buses)
    if seen != set(range(n_bus)):
        missing = sorted(set(range(n_bus)) - seen)
        raise FeederError(f"bus indices must be 0..{n_bus - 1}; missing {missing}")
    if [b.index for b in f.buses] != list(range(n_bus)):
        raise FeederError("buses must be listed in index order")
    if n_bus < 2:
        raise FeederError("feeder needs at least one non-slack bus")
    if f.buses[0].inverter is not None:
        raise FeederError("bus 0 (substation) cannot host an inverter")
    for b in f.buses:
        if b.inverter is not None and b.inverter.node != b.index:
            raise FeederError(f"inverter node {b.inverter.node} does not match bus {b.index}")
    if len(f.lines) != n_bus - 1:
        raise FeederError(f"radial feeder with {n_bus} buses needs {n_bus - 1} lines, got {len(f.lines)}")
    for k, ln in enumerate(f.lines):
        where = f"line {k} ({ln.from_bus}->{ln.to_bus})"
        if ln.from_bus not in seen or ln.to_bus not in seen:
            raise FeederError(f"{where}: unknown bus")
        if ln.from_bus == ln.to_bus:
            raise FeederError(f"{where}: self loop")
        if not (math.isfinite(ln.r) and math.isfinite(ln.x)):
            raise FeederError(f"{where}: non-finite impedance")
        if ln.r < 0:
            raise FeederError(f"{where}: negative resistance {ln.r}")
        if ln.r + ln.x <= 0:
            raise FeederError(f"{where}: r + x must be positive")
    # union-find: N lines over N+1 buses with no cycle implies connected
    root = list(range(n_bus))

    def find(i: int) -> int:
        while root[i] != i:
            root[i] = root[root[i]]
            i = root[i]
        return i

    for k, ln in enumerate(f.lines):
        a, b = find(ln.from_bus), find(ln.to_bus)
        if a == b:
            raise FeederError(f"line {k} ({ln.from_bus}->{ln.to_bus}) closes a cycle")
        root[a] = b
    comps = {find(i) for i in range(n_bus)}
    if len(comps) != 1:
        raise FeederError("feeder is disconnected")


def feeder_from_dict(data: dict) -> Feeder:
    """Build a feeder from the JSON schema, converting physical units to per-unit.

    Lines take either ``r_pu``/``x_pu`` or ``r_ohm``/``x_ohm``; bus loads take
    either ``p_pu``/``q_pu`` or ``p_kw``/``q_kvar`` (consumption positive in the
    physical form, stored negative).
    """
    try:
        s_base = float(data.get("s_base_kva", 1000.0))
        v_base = float(data.get("v_base_kv", 1.0))
        v_slack = float(data.get("v_slack_pu", 1.0))
        z_base = v_base**2 / (s_base / 1000.0)
        buses = []
        for entry in data["buses"]:
            idx = int(entry["index"])
            inv = entry.get("inverter")
            spec = None
            if inv is not None:
                rating = inv["s_rating_pu"] if "s_rating_pu" in inv else inv["s_rating_kva"] / s_base
                spec = InverterSpec(float(rating), idx)
            load = entry.get("load") or {}
            if "p_kw" in load or "q_kvar" in load:
                p_load = -float(load.get("p_kw", 0.0)) / s_base
                q_load = -float(load.get("q_kvar", 0.0)) / s_base
            else:
                p_load = float(load.get("p_pu", 0.0))
                q_load = float(load.get("q_pu", 0.0))
            buses.append(Bus(idx, spec, p_load, q_load, entry.get("name")))
        lines = []
        for entry in data["lines"]:
            if "r_pu" in entry:
                r, x = float(entry["r_pu"]), float(entry["x_pu"])
            else:
                r, x = float(entry["r_ohm"]) / z_base, float(entry["x_ohm"]) / z_base
            lines.append(Line(int(entry["from"]), int(entry["to"]), r, x))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FeederError):
            raise
        raise FeederError(f"malformed feeder data: {exc!r}") from exc
    buses.sort(key=lambda b: b.index)
    return Feeder(tuple(buses), tuple(lines), v_slack, s_base, v_base, str(data.get("name", "")))


def load_feeder(path: str | Path) -> Feeder:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FeederError(f"{path}: not valid JSON ({exc})") from exc
    return feeder_from_dict(data)


def save_feeder(feeder: Feeder, path: str | Path) -> None:
    Path(path).write_text(json.dumps(feeder.to_dict(), indent=2) + "\n")


def builtin_feeder(name: str) -> Feeder:
    """Load one of the packaged fixtures: ``"two_bus"`` or ``"ieee37"``."""
    path = Path(__file__).parent / "data" / f"{name}.json"
    if not path.exists():
        raise FeederError(f"no packaged feeder named {name!r}")
    return load_feeder(path)


@dataclass(frozen=True, eq=False)
class Scenario:
    """K-step time series of non-controllable injections and PV availability."""

    dt: float
    p_load: np.ndarray
    q_load: np.ndarray
    p_avail: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("p_load", "q_load", "p_avail"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            if arr.ndim != 2:
                raise ScenarioError(f"{name} must be a K x N matrix")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.p_load.shape == self.q_load.shape == self.p_avail.shape):
            raise ScenarioError(
                f"dimension mismatch: p {self.p_load.shape}, q {self.q_load.shape}, pav {self.p_avail.shape}"
            )
        for name in ("p_load", "q_load", "p_avail"):
            bad = np.argwhere(~np.isfinite(getattr(self, name)))
            if bad.size:
                k, n = bad[0]
                raise ScenarioError(f"non-finite {name} at step {k}, bus {n + 1}")
        neg = np.argwhere(self.p_avail < 0)
        if neg.size:
            k, n = neg[0]
            raise ScenarioError(f"negative p_avail at step {k}, bus {n + 1}")
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")

    @property
    def steps(self) -> int:
        return self.p_load.shape[0]

    @property
    def n(self) -> int:
        return self.p_load.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.dt == other.dt
            and np.array_equal(self.p_load, other.p_load)
            and np.array_equal(self.q_load, other.q_load)
            and np.array_equal(self.p_avail, other.p_avail)
        )

    __hash__ = object.__hash__

    def check_against(self, feeder: Feeder) -> None:
        if self.n != feeder.n:
            raise ScenarioError(f"scenario has {self.n} bus columns, feeder has {feeder.n}")
        off = ~feeder.inverter_mask
        bad = np.argwhere(self.p_avail[:, off] != 0)
        if bad.size:
            k, j = bad[0]
            n = int(np.flatnonzero(off)[j]) + 1
            raise ScenarioError(f"p_avail nonzero at step {k}, bus {n} which has no inverter")

    def slice(self, start: int, stop: int) -> Scenario:
        return Scenario(self.dt, self.p_load[start:stop], self.q_load[start:stop], self.p_avail[start:stop], dict(self.meta))


def load_scenario(path: str | Path, feeder: Feeder) -> Scenario:
    """Read a scenario CSV and its ``.json`` sidecar (``dt_seconds``)."""
    path = Path(path)
    n = feeder.n
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioError(f"{path}: empty file") from None
        expected = ["k"] + [f"p_{i}" for i in range(1, n + 1)] + [f"q_{i}" for i in range(1, n + 1)]
        expected += [f"pav_{i}" for i in range(1, n + 1)]
        header = [h.strip() for h in header]
        if header != expected:
            raise ScenarioError(f"{path}: header does not match a {n}-bus feeder (got {len(header)} columns)")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise ScenarioError(f"{path}:{line_no}: expected {len(expected)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ScenarioError(f"{path}:{line_no}: {exc}") from exc
    data = np.array(rows, dtype=float).reshape(-1, 3 * n)
    sidecar = path.with_suffix(".json")
    dt = 1.0
    meta: dict = {}
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        dt = float(meta.get("dt_seconds", 1.0))
    sc = Scenario(dt, data[:, :n], data[:, n : 2 * n], data[:, 2 * n :], meta)
    sc.check_against(feeder)
    return sc


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    path = Path(path)
    n = scenario.n
    header = ["k"] + [f"p_{i}" for i in range(1, n + 1)] + [f"q_{i}" for i in range(1, n + 1)]
    header += [f"pav_{i}" for i in range(1, n + 1)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(scenario.steps):
            vals = np.concatenate([scenario.p_load[k], scenario.q_load[k], scenario.p_avail[k]])
            w.writerow([k] + [repr(float(v)) for v in vals])
    meta = dict(scenario.meta)
    meta["dt_seconds"] = scenario.dt
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for :func:`synth_scenario`.

    The run horizon is mapped onto the clock interval ``hours``; PV follows a
    sine bell over ``daylight`` hours scaled to ``pv_peak`` times each
    inverter's rating.
    """

    dt: float = 1.0
    hours: tuple[float, float] = (11.0, 12.0)
    daylight: tuple[float, float] = (6.0, 18.0)
    pv_peak: float = 0.9
    load_scale: float = 1.0
    load_noise: float = 0.01
    default_load: float = 0.0
    cloud_theta: float = 0.02
    cloud_sigma: float = 0.08
    cloud_floor: float = 0.15
    breakpoints: tuple[float, ...] = (0.25, 0.5, 0.75)
    step_levels: tuple[float, ...] = (1.0, 0.6, 1.3, 0.8)


SYNTH_PRESETS = {
    "default": SynthConfig(),
    # PV near rating on a lightly loaded feeder: little reactive headroom left
    "high_pv": SynthConfig(pv_peak=1.0, load_scale=0.7),
}


def step_breakpoints(steps: int, config: SynthConfig = SynthConfig()) -> list[int]:
    """Step indices at which the ``step_change`` profile switches load level."""
    return [int(round(f * steps)) for f in config.breakpoints]


def synth_scenario(
    seed: int,
    profile: str,
    feeder: Feeder,
    steps: int,
    config: SynthConfig = SynthConfig(),
) -> Scenario:
    """Generate a deterministic synthetic scenario.

    ``clear_sky`` gives a smooth PV bell, ``cloudy`` multiplies the bell by a
    mean-reverting (Ornstein-Uhlenbeck) attenuation, and ``step_change`` holds
    PV at the bell and switches loads between piecewise-constant levels at
    :func:`step_breakpoints`.
    """
    if steps < 1:
        raise ScenarioError("steps must be >= 1")
    if profile not in ("clear_sky", "cloudy", "step_change"):
        raise ScenarioError(f"unknown profile {profile!r}")
    rng = np.random.default_rng(seed)
    n = feeder.n
    p0, q0 = feeder.nominal_load
    if not np.any(p0) and config.default_load:
        p0 = np.full(n, -config.default_load)
        q0 = 0.5 * p0
    p0 = p0 * config.load_scale
    q0 = q0 * config.load_scale

    h0, h1 = config.hours
    clock = h0 + (h1 - h0) * (np.arange(steps) + 0.5) / steps
    d0, d1 = config.daylight
    bell = np.clip(np.sin(np.pi * (clock - d0) / (d1 - d0)), 0.0, None)
    if profile == "cloudy":
        att = np.empty(steps)
        x = 1.0
        shocks = rng.standard_normal(steps)
        for k in range(steps):
            x += config.cloud_theta * (1.0 - x) + config.cloud_sigma * math.sqrt(config.cloud_theta) * shocks[k]
            att[k] = x
        bell = bell * np.clip(att, config.cloud_floor, 1.0)
    rating = feeder.s_rating
    p_avail = np.outer(bell, config.pv_peak * rating)
    p_avail = np.clip(p_avail, 0.0, None)

    if profile == "step_change":
        level = np.full(steps, config.step_levels[0])
        for i, b in enumerate(step_breakpoints(steps, config)):
            level[b:] = config.step_levels[min(i + 1, len(config.step_levels) - 1)]
        scale = level[:, None]
    else:
        scale = 1.0 + config.load_noise * rng.standard_normal((steps, n))
    p_load = scale * p0[None, :]
    q_load = scale * q0[None, :]
    meta = {"seed": seed, "profile": profile}
    if profile == "step_change":
        meta["breakpoints"] = step_breakpoints(steps, config)
    return Scenario(config.dt, p_load, q_load, p_avail, meta)


def net_injection(scenario: Scenario, feeder: Feeder, k: int | slice | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Loads plus PV at its maximum-power point (clipped to rating), Q = 0 from PV.

    This is the pre-adjustment operating point seen by the droop controllers.
    """
    sel = slice(None) if k is None else k
    pv = np.minimum(scenario.p_avail[sel], feeder.s_rating)
    return scenario.p_load[sel] + pv, np.array(scenario.q_load[sel])


def as_vector(x: Sequence[float] | np.ndarray, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got {arr.shape[0]}")
    return arr

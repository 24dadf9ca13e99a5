"""Command-line entry point: ``netdroop {design,run,compare,validate,synth}``.

Every artifact lands in ``--out``. Wall-clock solve times go to a separate
``timing.json`` so that all other files are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import VoltVarCurve, parse_controller, write_summary
from .design import DesignConfig, DroopGains, check_stability, neuman_error_sweep, neuman_matrix_error_sweep
from .grid import SYNTH_PRESETS, Feeder, Scenario, builtin_feeder, load_feeder, load_scenario, save_scenario, synth_scenario
from .oracles import MUTATIONS, format_report, run_validation
from .pipeline import design_window, run_loop
from .uncertainty import forecast_mu

OBJECTIVE_NAMES = {"voltdev": "voltage_dev", "participation": "participation", "sparsity": "sparsity"}
NEUMAN_ALPHAS = np.round(np.linspace(0.0, 1.0, 11), 10)


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    feeder: Feeder
    scenario: Scenario
    design_interval: int
    design: DesignConfig
    controller: str
    out: Path
    seed: int
    relinearize: bool = True

    def __post_init__(self) -> None:
        if self.design_interval < 1:
            raise UsageError("--design-interval must be >= 1")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _gains_record(gains: DroopGains) -> tuple[dict, float]:
    """Gains as a dict without wall-clock fields, plus the solve time."""
    d = gains.to_dict()
    meta = dict(d["meta"])
    elapsed = float(meta.pop("solve_time_s", float("nan")))
    d["meta"] = meta
    return d, elapsed


def _feeder(arg: str) -> Feeder:
    path = Path(arg)
    return load_feeder(path) if path.suffix == ".json" or path.exists() else builtin_feeder(arg)


def _scenario(args, feeder: Feeder) -> Scenario:
    if args.scenario:
        return load_scenario(args.scenario, feeder)
    return synth_scenario(args.seed, args.synth, feeder, args.steps, SYNTH_PRESETS[args.preset])


def _design_config(args) -> DesignConfig:
    return DesignConfig(
        objective=OBJECTIVE_NAMES[args.objective],
        gamma=args.gamma,
        epsilon0=args.eps0,
        m_p=args.m_p,
        m_q=args.m_q,
        eta_p=args.eta_p,
        eta_q=args.eta_q,
        robust=args.robust,
        volt_var_only=args.volt_var_only,
    )


def _run_config(args) -> RunConfig:
    feeder = _feeder(args.feeder)
    scenario = _scenario(args, feeder)
    scenario.check_against(feeder)
    parse_controller(args.controller)
    return RunConfig(feeder, scenario, args.design_interval, _design_config(args), args.controller, Path(args.out), args.seed, not args.no_relinearize)


def _window(args, scenario: Scenario) -> tuple[int, int]:
    if args.window is None:
        return 0, scenario.steps
    start, stop = args.window
    if not 0 <= start < stop <= scenario.steps:
        raise UsageError(f"--window {start} {stop} outside 0..{scenario.steps}")
    return start, stop


def cmd_design(args) -> int:
    cfg = _run_config(args)
    window = _window(args, cfg.scenario)
    cfg.out.mkdir(parents=True, exist_ok=True)
    model, gains = design_window(cfg.feeder, cfg.scenario, window, cfg.design, seed=cfg.seed)
    record, elapsed = _gains_record(gains)
    (cfg.out / "gains.json").write_text(_json(record))
    stab = check_stability(model, gains)
    (cfg.out / "stability.json").write_text(_json({**stab, "epsilon": gains.epsilon}))
    zeros = np.zeros(cfg.feeder.n)
    mu = forecast_mu(cfg.scenario, window, zeros, zeros, cfg.feeder).mu
    vec = neuman_error_sweep(model, gains, mu, NEUMAN_ALPHAS)
    mat = neuman_matrix_error_sweep(model, gains, NEUMAN_ALPHAS)
    with (cfg.out / "neuman.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "error_forecast", "error_matrix"])
        for a, e1, e2 in zip(NEUMAN_ALPHAS, vec, mat):
            w.writerow([f"{a:.2f}", f"{e1:.10e}", f"{e2:.10e}"])
    report = {
        "objective_value": gains.objective_value,
        "epsilon": gains.epsilon,
        "frobenius": stab["frob"],
        "spectral": stab["spec"],
        "spectral_radius": stab["rho"],
        "margin_ok": stab["margin_ok"],
        "e_inf": gains.meta.get("e_inf", ""),
        "t": gains.meta.get("t", ""),
        "active_coefficients": gains.active_count(),
        "neuman_max_forecast": max(vec),
        "neuman_max_matrix": max(mat),
        "solver": gains.meta.get("solver", ""),
        "status": gains.meta.get("status", ""),
    }
    with (cfg.out / "design_report.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value"])
        for k, v in report.items():
            w.writerow([k, f"{v:.10e}" if isinstance(v, float) else v])
    (cfg.out / "timing.json").write_text(_json({"design_solve_s": elapsed}))
    print(f"design: objective {gains.objective_value:.6e}, ||GH||_F {stab['frob']:.6f}, eps {gains.epsilon:.4g}, solve {elapsed:.2f} s")
    return 0 if stab["margin_ok"] else 1


def _run_one(cfg: RunConfig, controller: str, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    result = run_loop(cfg.feeder, cfg.scenario, cfg.design, controller, cfg.design_interval, cfg.relinearize, VoltVarCurve(), seed=cfg.seed)
    result.trace.write_csv(out / "trace.csv")
    records, times = [], []
    for wd in result.designs:
        rec, elapsed = _gains_record(wd.gains)
        records.append({"window": list(wd.window), "history": list(wd.history), "gains": rec})
        times.append(elapsed)
    (out / "designs.json").write_text(_json(records))
    summary = result.trace.summary
    write_summary(json.loads(_json(summary)), out / "summary.json")
    (out / "timing.json").write_text(_json({"design_solve_s": times}))
    return summary


def _run_ok(summary: dict) -> bool:
    return summary["bound_satisfied"] is not False and summary["max_infeasibility"] <= 1e-12 and summary["max_containment_excess"] <= 1e-12


def cmd_run(args) -> int:
    cfg = _run_config(args)
    summary = _run_one(cfg, cfg.controller, cfg.out)
    print(
        f"run ({cfg.controller}): v in [{summary['v_min']:.4f}, {summary['v_max']:.4f}], "
        f"violations {summary['violations_over']}+{summary['violations_under']}, "
        f"oscillation {summary['oscillation_index']:.3e}, bound {summary['bound_satisfied']}"
    )
    return 0 if _run_ok(summary) else 1


def cmd_compare(args) -> int:
    if len(args.controllers) < 2:
        raise UsageError("compare needs at least two controllers")
    cfg = _run_config(args)
    cfg.out.mkdir(parents=True, exist_ok=True)
    rows, failed = [], False
    for controller in args.controllers:
        parse_controller(controller)
        sub = cfg.out / controller.replace(":", "_")
        try:
            s = _run_one(cfg, controller, sub)
            bound = "undefined" if s["bound_satisfied"] is None else ("held" if s["bound_satisfied"] else "violated")
            rows.append([controller, f"{s['max_abs_dv']:.6e}", s["violations_over"], s["violations_under"], f"{s['oscillation_index']:.6e}", bound, ""])
            failed |= not _run_ok(s)
        except Exception as exc:  # keep going with the other controllers
            failed = True
            rows.append([controller, "", "", "", "", "", f"{type(exc).__name__}: {exc}"])
    with (cfg.out / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "max_abs_dv", "violations_over", "violations_under", "oscillation_index", "bound", "error"])
        w.writerows(rows)
    for r in rows:
        print(",".join(str(x) for x in r))
    return 1 if failed else 0


def cmd_validate(args) -> int:
    checks = run_validation(seed=args.seed, mutate=args.mutate)
    report = format_report(checks)
    print(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validate.txt").write_text(report + "\n")
    failures = [c.name for c in checks if c.passed is False]
    if failures:
        print("failed: " + "; ".join(failures), file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    feeder = _feeder(args.feeder)
    scenario = synth_scenario(args.seed, args.synth, feeder, args.steps, SYNTH_PRESETS[args.preset])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, out / "scenario.csv")
    print(f"synth: {scenario.steps} steps x {scenario.n} buses -> {out / 'scenario.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netdroop", description="Stability-constrained droop design and closed-loop simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--feeder", default="ieee37", help="built-in name (two_bus, ieee37) or feeder JSON path")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out")
    src = common.add_argument_group("scenario")
    src.add_argument("--scenario", help="scenario CSV (with .json sidecar); overrides --synth")
    src.add_argument("--synth", default="clear_sky", choices=["clear_sky", "cloudy", "step_change"])
    src.add_argument("--steps", type=int, default=3600)
    src.add_argument("--preset", default="default", choices=sorted(SYNTH_PRESETS))

    design = argparse.ArgumentParser(add_help=False)
    g = design.add_argument_group("design")
    g.add_argument("--objective", default="voltdev", choices=sorted(OBJECTIVE_NAMES))
    rob = g.add_mutually_exclusive_group()
    rob.add_argument("--robust", dest="robust", action="store_true", help="P2 over the min/max box")
    rob.add_argument("--nominal", dest="robust", action="store_false", help="P1 on the window mean (default)")
    g.set_defaults(robust=False)
    g.add_argument("--gamma", type=float, default=0.01)
    g.add_argument("--eps0", type=float, default=1e-3)
    g.add_argument("--eta-p", type=float, default=0.0)
    g.add_argument("--eta-q", type=float, default=0.0)
    g.add_argument("--m-p", type=float, default=0.0)
    g.add_argument("--m-q", type=float, default=0.0)
    g.add_argument("--volt-var-only", action="store_true")
    g.add_argument("--design-interval", type=int, default=900, help="steps between redesigns")
    g.add_argument("--no-relinearize", action="store_true")
    g.add_argument("--controller", default="designed", help="designed | ieee1547 | sensitivity | scaled:<offset>")

    p = sub.add_parser("design", parents=[common, design], help="design gains for one window")
    p.add_argument("--window", type=int, nargs=2, metavar=("START", "STOP"))
    p.set_defaults(func=cmd_design)
    p = sub.add_parser("run", parents=[common, design], help="two-timescale closed-loop run")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", parents=[common, design], help="run several controllers on one scenario")
    p.add_argument("--controllers", nargs="+", required=True)
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("validate", help="run the oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--mutate", choices=MUTATIONS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic scenario")
    p.set_defaults(func=cmd_synth)
    return parser


def _origin(exc: BaseException) -> str:
    """Name of the innermost package module the exception passed through."""
    name = "netdroop"
    for frame in traceback.extract_tb(exc.__traceback__):
        stem = Path(frame.filename).stem
        if "netdroop" in Path(frame.filename).parts and stem not in ("cli", "__init__", "__main__"):
            name = stem
    return name


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except Exception as exc:
        print(f"netdroop {args.command}: {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0

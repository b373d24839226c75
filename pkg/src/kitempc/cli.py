"""Command-line entry points.

Exit codes: 0 success, 1 aborted run, 2 invalid input (scenario, overrides,
log schema, arguments), 3 no feasible tuning.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoFeasibleGain, NoFeasibleRate
from .estimation import OnlineEstimator, ParamEstimate
from .guidance import MpcConfig
from .reference_path import SafetyWindow
from .robustness import (
    DEFAULT_GAIN_GRID,
    FrequencyGrid,
    PerformanceSpec,
    UncertaintyBounds,
    nominal_complementary,
    robust_stability_margin,
    rp_sup,
    select_gain,
    tune,
    weight_Wm,
    weight_Wp,
    worst_case_curve,
)
from .simulator import (
    ScenarioConfig,
    ScenarioError,
    load_scenario,
    plot_data,
    read_log_csv,
    run_closed_loop,
    summarize,
    write_series_csv,
)

EXIT_OK = 0
EXIT_ABORTED = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3

MPC_KEYS = ("H", "Q", "Q_H", "R", "S", "S_H", "l_m", "window")
IDENTIFY_COLUMNS = ("t", "theta_meas", "phi_meas", "r", "delta")


@dataclass
class RunConfig:
    scenario: str
    out: Path
    seed: int | None = None
    overrides: list = field(default_factory=list)
    debug_mpc: bool = False
    verbosity: int = 0


def _emit(obj, stream=None):
    print(json.dumps(obj, indent=2, sort_keys=True), file=stream or sys.stdout)


def _error(kind, message, **extra):
    return {"error": kind, "message": message, **extra}


def parse_override(text):
    """``key=value``; the value is read as JSON when possible, else as a string."""
    if "=" not in text:
        raise ScenarioError(text, "override must have the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ScenarioError(text, "empty override key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(scenario: ScenarioConfig, overrides, seed=None):
    """Scenario and MPC configuration with ``overrides`` applied and type-checked."""
    data = scenario.to_dict()
    mpc = {}
    for text in overrides:
        key, value = parse_override(text)
        if key.startswith("mpc."):
            name = key[4:]
            if name not in MPC_KEYS:
                raise ScenarioError(key, "unknown MPC setting")
            mpc[name] = value
        elif key.startswith("coupling."):
            data.setdefault("coupling", {})[key.split(".", 1)[1]] = value
        else:
            data[key] = value
    if seed is not None:
        data["seed"] = seed
    sc = ScenarioConfig.from_dict(data)
    return sc, build_mpc_config(mpc, sc.T)


def build_mpc_config(values: dict, T: float) -> MpcConfig:
    kw = {"T": T}
    for name, value in values.items():
        key = f"mpc.{name}"
        if name == "H":
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ScenarioError(key, "expected a positive integer")
            kw[name] = value
        elif name in ("R", "l_m"):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ScenarioError(key, "expected a number")
            kw[name] = float(value)
        elif name == "window":
            try:
                kw[name] = SafetyWindow(*[float(v) for v in value])
                if len(value) != 4:
                    raise ValueError
            except (TypeError, ValueError):
                raise ScenarioError(key, "expected [theta_min, theta_max, phi_min, phi_max]") from None
        else:
            try:
                M = np.asarray(value, dtype=float)
                if M.shape == (2,):
                    M = np.diag(M)
                if M.shape != (2, 2):
                    raise ValueError
            except (TypeError, ValueError):
                raise ScenarioError(key, "expected a 2x2 matrix or a diagonal pair") from None
            kw[name] = M
    try:
        return MpcConfig(**kw)
    except ValueError as exc:
        field_name = next((f"mpc.{n}" for n in values if n in str(exc)), "mpc")
        raise ScenarioError(field_name, str(exc)) from None


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_simulate(cfg: RunConfig) -> int:
    try:
        sc, mpc = apply_overrides(load_scenario(cfg.scenario), cfg.overrides, cfg.seed)
    except ScenarioError as exc:
        _emit(_error("ScenarioError", str(exc), field=exc.field))
        return EXIT_INPUT
    except FileNotFoundError as exc:
        _emit(_error("ScenarioError", f"scenario file not found: {exc.filename}", field="--scenario"))
        return EXIT_INPUT

    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    debug_lines = []
    log = run_closed_loop(sc, mpc, debug=debug_lines.append if cfg.debug_mpc else None)
    _write(out / "log.csv", log.to_csv())
    summary = summarize(log)
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name, (header, cols) in plot_data(log).items():
        _write(out / "plots" / name, write_series_csv(header, cols))
    if cfg.debug_mpc:
        _write(out / "mpc_debug.jsonl", "\n".join(debug_lines) + "\n")
    if log.aborted is not None:
        _emit(_error("RunAborted", str(log.aborted), reason=log.aborted.reason, t=log.aborted.t))
        return EXIT_ABORTED
    if cfg.verbosity:
        _emit({k: v for k, v in summary.items() if k != "parameter_trace"})
    return EXIT_OK


def sweep_csv(grid, C_0, K, t_d, u, spec) -> str:
    w = grid.omega
    curve = worst_case_curve(grid, C_0, K, t_d, u, spec)
    cols = [w, curve, weight_Wp(w, spec), weight_Wm(w, K, t_d, u), nominal_complementary(w, C_0, K)]
    return write_series_csv(("omega", "worst_wp_s", "W_p", "W_m", "T_nom"), [list(map(float, c)) for c in cols])


def _check_positive(**values):
    for name, v in values.items():
        if not (math.isfinite(v) and v > 0):
            return name
    return None


def cmd_tune(K, t_d, frac_K, frac_td, l_m, l_e, out: Path | None = None) -> int:
    bad = _check_positive(K=K, l_m=l_m, l_e=l_e)
    if bad:
        _emit(_error("InvalidArgument", f"{bad} must be positive", field=bad))
        return EXIT_INPUT
    if not t_d > 0:
        _emit(_error("InvalidArgument", "t_d must be positive: the predictor degenerates without a delay", field="t_d"))
        return EXIT_INPUT
    if frac_K < 0 or frac_td < 0:
        _emit(_error("InvalidArgument", "uncertainty fractions must be non-negative", field="fractions"))
        return EXIT_INPUT
    u = UncertaintyBounds.relative(K, t_d, frac_K, frac_td)
    grid = FrequencyGrid()
    try:
        res = tune(K, t_d, u, l_m, l_e, grid)
    except (NoFeasibleGain, NoFeasibleRate) as exc:
        try:
            C_0 = select_gain(K, t_d, u, grid)
        except NoFeasibleGain:
            C_0 = float(DEFAULT_GAIN_GRID[0])
        diag = sweep_csv(grid, C_0, K, t_d, u, PerformanceSpec(l_m, l_e, 1e-3))
        err = _error(type(exc).__name__, str(exc), C_0=C_0)
        if out is not None:
            _write(out / "sweep.csv", diag)
            err["sweep"] = str(out / "sweep.csv")
        else:
            err["sweep_csv"] = diag
        _emit(err)
        return EXIT_INFEASIBLE
    result = {"C_0": res.C_0, "l_r": res.l_r, "sup": res.sup_value, "rs_margin": res.rs_margin}
    if out is not None:
        _write(out / "sweep.csv", sweep_csv(grid, res.C_0, K, t_d, u, PerformanceSpec(l_m, l_e, res.l_r)))
        result["sweep"] = str(out / "sweep.csv")
    _emit(result)
    return EXIT_OK


def cmd_analyze(K, t_d, C_0, l_r, frac_K, frac_td, l_m, l_e, out: Path | None = None) -> int:
    bad = _check_positive(K=K, t_d=t_d, C_0=C_0, l_r=l_r, l_m=l_m, l_e=l_e)
    if bad:
        _emit(_error("InvalidArgument", f"{bad} must be positive", field=bad))
        return EXIT_INPUT
    u = UncertaintyBounds.relative(K, t_d, frac_K, frac_td)
    grid = FrequencyGrid()
    spec = PerformanceSpec(l_m, l_e, l_r)
    sup = rp_sup(C_0, K, t_d, u, spec, grid)
    margin = robust_stability_margin(C_0, K, t_d, u, grid)
    result = {
        "rs_margin": margin,
        "robustly_stable": margin < 1.0,
        "rp_sup": sup if math.isfinite(sup) else None,
        "robust_performance": sup < 1.0,
    }
    if out is not None:
        _write(out / "sweep.csv", sweep_csv(grid, C_0, K, t_d, u, spec))
        result["sweep"] = str(out / "sweep.csv")
    _emit(result)
    return EXIT_OK


def replay_estimation(cols: dict, T: float | None = None, scheme="central", width=9, window=None):
    """Refit the model at every recorded update (or every ``window`` seconds)."""
    t = np.asarray(cols["t"], dtype=float)
    if t.size < 2:
        raise ValueError("log has fewer than two samples")
    T = T or float(t[1] - t[0])
    th = np.asarray(cols["theta_meas"], dtype=float)
    ph = np.asarray(cols["phi_meas"], dtype=float)
    r = np.asarray(cols["r"], dtype=float)
    delta = np.asarray(cols["delta"], dtype=float)
    if window is None and "update" in cols:
        fire = np.asarray(cols["update"], dtype=float) > 0
    else:
        step = int(round((window or 5.0) / T))
        fire = np.zeros(t.size, dtype=bool)
        fire[step - 1::step] = True
    init = ParamEstimate(math.nan, math.nan, math.nan, math.nan)
    est = OnlineEstimator(T, init, width=width, scheme=scheme)
    rows = []
    for k in range(t.size):
        est.record(th[k], ph[k], r[k], delta[k])
        if fire[k]:
            e = est.refit(float(t[k] + T))
            if e is init:
                continue
            C_0 = l_r = math.nan
            if e.K > 0 and e.t_d > 0:
                try:
                    tr = tune(e.K, e.t_d, UncertaintyBounds.relative(e.K, e.t_d), 2.5, 0.9)
                    C_0, l_r = tr.C_0, tr.l_r
                except (NoFeasibleGain, NoFeasibleRate):
                    pass
            rows.append((e.t, e.alpha_L, e.alpha_G, e.K, e.t_d, C_0, l_r, e.validity,
                         e.residual_velocity, e.residual_steering))
    return rows


ESTIMATE_COLUMNS = ("t", "alpha_L", "alpha_G", "K", "t_d", "C_0", "l_r", "validity",
                    "residual_velocity", "residual_steering")


def cmd_identify(log_path, out: Path, scheme="central", width=9, window=None) -> int:
    try:
        text = Path(log_path).read_text()
        cols = read_log_csv(text)
        missing = [c for c in IDENTIFY_COLUMNS if c not in cols]
        if missing:
            raise ValueError(f"missing columns: {', '.join(missing)}")
        for c in IDENTIFY_COLUMNS:
            cols[c] = [float(v) for v in cols[c]]
        rows = replay_estimation(cols, scheme=scheme, width=width, window=window)
    except FileNotFoundError:
        _emit(_error("SchemaError", f"log file not found: {log_path}"))
        return EXIT_INPUT
    except ValueError as exc:
        _emit(_error("SchemaError", str(exc)))
        return EXIT_INPUT
    _write(out, write_series_csv(ESTIMATE_COLUMNS, list(zip(*rows)) if rows else [[]] * len(ESTIMATE_COLUMNS)))
    _emit({"estimates": len(rows), "out": str(out)})
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="kitempc", description="Kite guidance MPC simulation and tuning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a closed-loop scenario")
    s.add_argument("--scenario", required=True, help="scenario JSON file or bundled name (flight1, flight2)")
    s.add_argument("--out", type=Path, default=Path("out"))
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="scenario field, coupling.<name> or mpc.<name>; repeatable")
    s.add_argument("--debug-mpc", action="store_true", help="write one JSON line per guidance solve")
    s.add_argument("-v", "--verbose", action="count", default=0)

    def limits(q):
        q.add_argument("--K", type=float, required=True)
        q.add_argument("--t-d", type=float, required=True, dest="t_d")
        q.add_argument("--frac-K", type=float, default=0.2, dest="frac_K")
        q.add_argument("--frac-td", type=float, default=0.2, dest="frac_td")
        q.add_argument("--l-m", type=float, default=2.5, dest="l_m")
        q.add_argument("--l-e", type=float, default=0.9, dest="l_e")
        q.add_argument("--out", type=Path, default=None)

    t = sub.add_parser("tune", help="select C_0 and l_r for a steering model")
    limits(t)
    a = sub.add_parser("analyze-robustness", help="certify a given (C_0, l_r)")
    limits(a)
    a.add_argument("--C0", type=float, required=True, dest="C_0")
    a.add_argument("--l-r", type=float, required=True, dest="l_r")

    i = sub.add_parser("identify", help="replay parameter estimation over a log")
    i.add_argument("log", help="log CSV written by simulate")
    i.add_argument("--out", type=Path, default=Path("estimates.csv"))
    i.add_argument("--scheme", choices=("central", "forward"), default="central")
    i.add_argument("--width", type=int, default=9)
    i.add_argument("--window", type=float, default=None, help="fit every WINDOW seconds instead of at logged updates")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(RunConfig(args.scenario, args.out, args.seed, args.override, args.debug_mpc, args.verbose))
    if args.command == "tune":
        return cmd_tune(args.K, args.t_d, args.frac_K, args.frac_td, args.l_m, args.l_e, args.out)
    if args.command == "analyze-robustness":
        return cmd_analyze(args.K, args.t_d, args.C_0, args.l_r, args.frac_K, args.frac_td, args.l_m, args.l_e, args.out)
    return cmd_identify(args.log, args.out, args.scheme, args.width, args.window)


if __name__ == "__main__":
    sys.exit(main())

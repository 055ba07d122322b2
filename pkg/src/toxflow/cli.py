"""Command line entry point.

Subcommands
    coeffs     gains CSV + assumption report JSON + Riccati CSV
    riccati    Riccati CSV only
    simulate   one trajectory CSV + its flow export + P&L JSON
    mc         Monte Carlo summary JSON (+ histograms, per-path scalars)
    calibrate  flow-data estimators -> calibration JSON + drift CDF CSV
    check      numerical self-diagnostics for a scenario/config

Every command is deterministic given its full flag set; outputs carry no
timestamps, so reruns are byte-identical.  Exit codes: 0 success, 2
validation or assumption failure, 1 internal numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
from pathlib import Path

import numpy as np

from .model import (
    AssumptionError,
    NumericalError,
    SCENARIO_NAMES,
    TimeGrid,
    ToxflowError,
    ValidationError,
    default_grid,
    load_config,
    scenario_preset,
)
from .filtering import solve_riccati, write_riccati_csv
from .control import (
    DEFAULT_TOL,
    build_coefficient_table,
    solve_phi_forward,
    write_assumptions_json,
    write_gains_csv,
)
from .sim import (
    Agent,
    _table_for_agent,
    pnl_decomposition,
    run_montecarlo,
    simulate_path,
    write_flow_csv,
    write_histogram_csv,
    write_mc_summary_json,
    write_paths_csv,
    write_trajectory_csv,
)
from .calib import (
    estimate_b_proxy,
    estimate_sigma,
    estimate_theta_daily,
    load_flow_csv,
    write_calibration_json,
    write_theta_cdf_csv,
)


# ---- shared plumbing ------------------------------------------------------------

def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", choices=SCENARIO_NAMES,
                   help="named scenario preset")
    p.add_argument("--config", metavar="FILE",
                   help="model config file (overrides --scenario)")
    p.add_argument("--n-steps", type=int, default=1000, metavar="N",
                   help="time grid steps (default 1000)")
    p.add_argument("--true-b", type=float, default=None, metavar="B",
                   help="override the world's feedback coefficient b")
    p.add_argument("--out", default=".", metavar="DIR",
                   help="output directory (default .)")


def _spec_from_args(args):
    if args.config:
        spec = load_config(args.config)
    elif args.scenario:
        spec = scenario_preset(args.scenario)
    else:
        raise ValidationError("provide --scenario or --config")
    if args.true_b is not None:
        spec = spec.with_b(args.true_b)
    return spec


def _grid_from_args(spec, args) -> TimeGrid:
    if args.n_steps < 1:
        raise ValidationError("--n-steps must be positive")
    return TimeGrid(T=spec.T, n_steps=args.n_steps)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _safe_label(label: str) -> str:
    return label.replace(":", "_")


# ---- subcommands ------------------------------------------------------------------

def cmd_coeffs(args) -> int:
    spec = _spec_from_args(args)
    grid = _grid_from_args(spec, args)
    out = _outdir(args)
    try:
        table = build_coefficient_table(spec, grid, tol=args.tol)
    except AssumptionError as err:
        if err.report is not None:
            write_assumptions_json(err.report, out / "assumptions.json")
            print(f"wrote {out / 'assumptions.json'}")
        raise
    ric = solve_riccati(spec, grid)
    write_gains_csv(table, out / "gains.csv")
    write_assumptions_json(table.report, out / "assumptions.json")
    write_riccati_csv(ric, out / "riccati.csv")
    print(f"wrote {out / 'gains.csv'}, {out / 'assumptions.json'}, {out / 'riccati.csv'}")
    if not table.report.passed:
        print("assumption check FAILED: " + table.report.describe())
        return 2
    return 0


def cmd_riccati(args) -> int:
    spec = _spec_from_args(args)
    grid = _grid_from_args(spec, args)
    out = _outdir(args)
    ric = solve_riccati(spec, grid)
    write_riccati_csv(ric, out / "riccati.csv")
    print(f"wrote {out / 'riccati.csv'}")
    return 0


def cmd_simulate(args) -> int:
    spec = _spec_from_args(args)
    grid = _grid_from_args(spec, args)
    out = _outdir(args)
    agent = Agent.parse(args.agent)
    base_table = build_coefficient_table(spec, grid)
    table = _table_for_agent(spec, base_table, agent, None)
    ric = solve_riccati(spec, grid)
    traj = simulate_path(spec, table, ric, agent, args.seed, args.path_index)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_flow_csv(traj, out / "flow.csv")
    pnl_no_trade, pnl_trading, pnl_total = pnl_decomposition(traj, spec, flow=args.pnl_flow)
    payload = {
        "agent": traj.agent,
        "seed": traj.seed,
        "path_index": traj.path_index,
        "flow_mode": args.pnl_flow,
        "pnl_no_trade": pnl_no_trade,
        "pnl_trading": pnl_trading,
        "pnl_total": pnl_total,
        "cost": traj.cost,
        "terminal_inventory": traj.terminal_inventory,
    }
    with open(out / "pnl.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'trajectory.csv'}, {out / 'flow.csv'}, {out / 'pnl.json'}")
    print(f"cost={traj.cost:.6g} trading_pnl={traj.trading_pnl:.6g} "
          f"total_pnl={traj.total_pnl:.6g}")
    return 0


def cmd_montecarlo(args) -> int:
    spec = _spec_from_args(args)
    grid = _grid_from_args(spec, args)
    out = _outdir(args)
    agents = [Agent.parse(a) for a in args.agents.split(",") if a.strip()]
    if not agents:
        raise ValidationError("--agents must name at least one agent")
    summaries = run_montecarlo(
        spec, agents, args.paths, args.seed,
        grid=grid, workers=args.workers, bins=args.bins,
    )
    write_mc_summary_json(summaries, out / "mc_summary.json")
    written = [str(out / "mc_summary.json")]
    for summary in summaries:
        label = _safe_label(summary.agent)
        if args.emit_histograms:
            for quantity in ("trading_pnl", "total_pnl", "pnl_no_trade"):
                hist_path = out / f"hist_{label}_{quantity}.csv"
                write_histogram_csv(summary, quantity, hist_path)
                written.append(str(hist_path))
        if args.emit_paths:
            paths_path = out / f"paths_{label}.csv"
            write_paths_csv(summary, paths_path)
            written.append(str(paths_path))
    print("wrote " + ", ".join(written))
    for summary in summaries:
        print(f"{summary.agent}: cost {summary.cost_mean:.6g} "
              f"+/- {summary.cost_se:.2g} (se), n={summary.n_paths}")
    return 0


def cmd_calibrate(args) -> int:
    out = _outdir(args)
    series = load_flow_csv(args.flow)
    sigma_hat = estimate_sigma(series)
    theta_daily = estimate_theta_daily(series)
    b_proxy = estimate_b_proxy(series) if args.b_proxy else None
    write_calibration_json(out / "calibration.json", sigma_hat, theta_daily, b_proxy)
    write_theta_cdf_csv(theta_daily, out / "theta_cdf.csv")
    print(f"wrote {out / 'calibration.json'}, {out / 'theta_cdf.csv'}")
    print(f"sigma_hat={sigma_hat:.6g} days={len(theta_daily)}"
          + (f" b_proxy={b_proxy:.4g}" if b_proxy is not None else ""))
    return 0


def cmd_check(args) -> int:
    spec = _spec_from_args(args)
    grid = _grid_from_args(spec, args)
    failures = []

    ric = solve_riccati(spec, grid)
    psd_floor = float(np.min(np.linalg.eigvalsh(ric.Sigma)))
    print(f"riccati: min eigenvalue {psd_floor:.3e} (PSD within solver floor)")

    table = build_coefficient_table(spec, grid, tol=args.tol)
    terminal_dev = float(np.max(np.abs(table.S[-1] - np.eye(8))))
    print(f"transition: |S(T) - I| = {terminal_dev:.3e}")
    if terminal_dev != 0.0:
        failures.append("S(T) deviates from the identity")

    phi = solve_phi_forward(spec, grid)
    recon = np.einsum("kij,kjl->kil", table.S, phi)
    consistency = float(np.max(np.abs(recon - phi[-1]) / (1.0 + np.abs(phi[-1]))))
    print(f"transition: forward/backward consistency {consistency:.3e}")
    if consistency > 1e-6:
        failures.append("forward/backward transition mismatch above 1e-6")

    for name, (value, t_min) in table.report.quantities.items():
        status = "ok" if value >= table.report.tol else "FAIL"
        print(f"assumption {name}: inf {value:.6e} at t={t_min:.6g} [{status}]")
    if not table.report.passed:
        failures.append("assumption infima below tolerance")

    if failures:
        for failure in failures:
            print("FAIL: " + failure)
        return 2
    print("all checks passed")
    return 0


# ---- parser ------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toxflow",
        description="Optimal unwinding of toxic order flow: coefficients, "
                    "simulation, Monte Carlo and flow calibration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", help="write gains, assumption report and Riccati CSVs")
    _add_model_args(p)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL,
                   help="assumption infimum tolerance")
    p.set_defaults(func=cmd_coeffs)

    p = sub.add_parser("riccati", help="write the filter Riccati CSV")
    _add_model_args(p)
    p.set_defaults(func=cmd_riccati)

    p = sub.add_parser("simulate", help="simulate one path and write its artifacts")
    _add_model_args(p)
    p.add_argument("--agent", default="partial",
                   help="partial | full | naive:<b> | no_trade (default partial)")
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--path-index", type=int, default=0)
    p.add_argument("--pnl-flow", choices=("uncontrolled", "realized"),
                   default="uncontrolled",
                   help="inflow leg of the P&L decomposition")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mc", help="Monte Carlo over agents with common random numbers")
    _add_model_args(p)
    p.add_argument("--agents", default="partial",
                   help="comma list, e.g. partial,full,naive:0,no_trade")
    p.add_argument("--paths", type=int, default=2000)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--workers", type=int, default=os.cpu_count(),
                   help="worker processes (default: all cores)")
    p.add_argument("--bins", type=int, default=50, help="histogram bins")
    p.add_argument("--emit-histograms", action="store_true")
    p.add_argument("--emit-paths", action="store_true",
                   help="write per-path terminal scalars per agent")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("calibrate", help="run the flow estimators on a CSV")
    p.add_argument("--flow", required=True, metavar="FILE",
                   help="flow CSV with header timestamp,dt,dz[,q]")
    p.add_argument("--b-proxy", action="store_true",
                   help="also estimate the hedge-feedback proxy (needs q column)")
    p.add_argument("--out", default=".", metavar="DIR")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("check", help="numerical self-diagnostics")
    _add_model_args(p)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"numerical error: {err}")
        return 1
    except (ToxflowError, OSError) as err:
        print(f"error: {err}")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

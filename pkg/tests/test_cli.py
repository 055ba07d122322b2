"""End-to-end CLI runs in temporary directories.

Grids are kept small (--n-steps 200-400) so the whole module stays fast;
numerical content is covered by the library tests, here we check wiring,
artifacts and exit codes.
"""

import dataclasses
import json

import numpy as np

from toxflow import dumps_config, scenario_preset
from toxflow.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_requires_scenario_or_config(capsys):
    code, out = run(capsys, "riccati")
    assert code == 2
    assert "error: provide --scenario or --config" in out


def test_riccati(tmp_path, capsys):
    code, out = run(capsys, "riccati", "--scenario", "reversion",
                    "--n-steps", "200", "--out", str(tmp_path))
    assert code == 0 and "riccati.csv" in out
    data = np.genfromtxt(tmp_path / "riccati.csv", delimiter=",", names=True)
    assert data.shape[0] == 201
    assert data["Sigma11"][0] == 0.0


def test_coeffs(tmp_path, capsys):
    code, out = run(capsys, "coeffs", "--scenario", "reversion",
                    "--n-steps", "400", "--out", str(tmp_path))
    assert code == 0
    gains = np.genfromtxt(tmp_path / "gains.csv", delimiter=",", names=True)
    assert gains.shape[0] == 401
    assert gains["gX"][-1] == -20000.0  # terminal gain -2 alpha / eps
    assert np.all(gains["gU"] == 0.0)   # no signal in this scenario
    report = json.loads((tmp_path / "assumptions.json").read_text())
    assert report["passed"] is True
    assert (tmp_path / "riccati.csv").exists()


def test_coeffs_signal_scenario(tmp_path, capsys):
    code, _ = run(capsys, "coeffs", "--scenario", "short_signal",
                  "--n-steps", "400", "--out", str(tmp_path))
    assert code == 0
    gains = np.genfromtxt(tmp_path / "gains.csv", delimiter=",", names=True)
    assert np.any(gains["gU"] != 0.0)


def test_coeffs_true_b_changes_gains(tmp_path, capsys):
    run(capsys, "coeffs", "--scenario", "reversion",
        "--n-steps", "200", "--out", str(tmp_path / "a"))
    run(capsys, "coeffs", "--scenario", "reversion", "--true-b", "-0.3",
        "--n-steps", "200", "--out", str(tmp_path / "b"))
    ga = np.genfromtxt(tmp_path / "a" / "gains.csv", delimiter=",", names=True)
    gb = np.genfromtxt(tmp_path / "b" / "gains.csv", delimiter=",", names=True)
    assert not np.array_equal(ga["gTheta"], gb["gTheta"])
    # the filter does not depend on b, so the Riccati export is identical
    assert (tmp_path / "a" / "riccati.csv").read_bytes() == \
        (tmp_path / "b" / "riccati.csv").read_bytes()


def test_coeffs_failed_report_still_writes_artifacts(tmp_path, capsys):
    # an unreachable tolerance fails the assumption check but the gains are
    # still finite, so everything is written and the exit code flags it
    code, out = run(capsys, "coeffs", "--scenario", "reversion",
                    "--n-steps", "200", "--tol", "1.0", "--out", str(tmp_path))
    assert code == 2
    assert "assumption check FAILED" in out
    assert (tmp_path / "gains.csv").exists()
    report = json.loads((tmp_path / "assumptions.json").read_text())
    assert report["passed"] is False


def test_coeffs_degenerate_epsilon(tmp_path, capsys):
    # a vanishing temporary-impact scale makes the transition blow up before
    # any diagnostic report exists
    spec = dataclasses.replace(scenario_preset("reversion"), epsilon=1e-12)
    cfg = tmp_path / "model.toxflow"
    cfg.write_text(dumps_config(spec))
    code, out = run(capsys, "coeffs", "--config", str(cfg),
                    "--n-steps", "200", "--out", str(tmp_path))
    assert code == 2
    assert "error:" in out and "non-invertible" in out
    assert not (tmp_path / "assumptions.json").exists()


def test_simulate(tmp_path, capsys):
    code, out = run(capsys, "simulate", "--scenario", "reversion",
                    "--n-steps", "300", "--seed", "7", "--out", str(tmp_path))
    assert code == 0
    assert (tmp_path / "trajectory.csv").exists()
    assert (tmp_path / "flow.csv").exists()
    pnl = json.loads((tmp_path / "pnl.json").read_text())
    assert pnl["agent"] == "partial" and pnl["seed"] == 7
    assert pnl["flow_mode"] == "uncontrolled"
    assert set(pnl) == {"agent", "seed", "path_index", "flow_mode", "pnl_no_trade",
                        "pnl_trading", "pnl_total", "cost", "terminal_inventory"}
    assert all(np.isfinite(pnl[k]) for k in ("pnl_no_trade", "pnl_trading",
                                              "pnl_total", "cost"))
    assert "cost=" in out


def test_simulate_naive_agent(tmp_path, capsys):
    code, _ = run(capsys, "simulate", "--scenario", "reversion", "--agent", "naive:0",
                  "--n-steps", "300", "--pnl-flow", "realized", "--out", str(tmp_path))
    assert code == 0
    pnl = json.loads((tmp_path / "pnl.json").read_text())
    assert pnl["agent"] == "naive:0" and pnl["flow_mode"] == "realized"


def test_simulate_bad_agent(tmp_path, capsys):
    code, out = run(capsys, "simulate", "--scenario", "reversion",
                    "--agent", "alien", "--out", str(tmp_path))
    assert code == 2 and "error:" in out


def test_mc_artifacts_and_determinism(tmp_path, capsys):
    argv = ("mc", "--scenario", "reversion", "--n-steps", "200",
            "--paths", "6", "--seed", "5", "--workers", "1", "--bins", "4",
            "--agents", "partial,naive:0", "--emit-histograms", "--emit-paths")
    code, out = run(capsys, *argv, "--out", str(tmp_path / "run1"))
    assert code == 0
    doc = json.loads((tmp_path / "run1" / "mc_summary.json").read_text())
    assert [a["agent"] for a in doc["agents"]] == ["partial", "naive:0"]
    for name in ("hist_partial_total_pnl.csv", "hist_naive_0_trading_pnl.csv",
                 "paths_partial.csv", "paths_naive_0.csv"):
        assert (tmp_path / "run1" / name).exists(), name
    assert "partial: cost" in out

    code, _ = run(capsys, *argv, "--out", str(tmp_path / "run2"))
    assert code == 0
    assert (tmp_path / "run1" / "mc_summary.json").read_bytes() == \
        (tmp_path / "run2" / "mc_summary.json").read_bytes()


def test_mc_empty_agent_list(tmp_path, capsys):
    code, out = run(capsys, "mc", "--scenario", "reversion", "--agents", ",",
                    "--out", str(tmp_path))
    assert code == 2 and "at least one agent" in out


def test_calibrate_round_trip(tmp_path, capsys):
    run(capsys, "simulate", "--scenario", "reversion", "--n-steps", "400",
        "--seed", "3", "--out", str(tmp_path))
    code, out = run(capsys, "calibrate", "--flow", str(tmp_path / "flow.csv"),
                    "--b-proxy", "--out", str(tmp_path))
    assert code == 0
    doc = json.loads((tmp_path / "calibration.json").read_text())
    assert doc["sigma_hat"] > 0
    assert len(doc["theta_daily"]) == 1  # one simulated day
    assert -1.0 <= doc["b_proxy"] <= 1.0
    cdf = np.genfromtxt(tmp_path / "theta_cdf.csv", delimiter=",", names=True)
    assert cdf["cdf"] == 1.0
    assert "sigma_hat=" in out and "b_proxy=" in out


def test_calibrate_missing_file(tmp_path, capsys):
    code, out = run(capsys, "calibrate", "--flow", str(tmp_path / "nope.csv"),
                    "--out", str(tmp_path))
    assert code == 2 and "error:" in out


def test_calibrate_empty_file(tmp_path, capsys):
    flow = tmp_path / "empty.csv"
    flow.write_text("")
    code, out = run(capsys, "calibrate", "--flow", str(flow), "--out", str(tmp_path))
    assert code == 2 and "empty file" in out


def test_check_passes(capsys):
    code, out = run(capsys, "check", "--scenario", "reversion", "--n-steps", "300")
    assert code == 0
    assert "all checks passed" in out
    assert "assumption g_denominator" in out and "[ok]" in out
    assert "riccati: min eigenvalue" in out


def test_check_fails_with_strict_tolerance(capsys):
    code, out = run(capsys, "check", "--scenario", "reversion",
                    "--n-steps", "300", "--tol", "1.0")
    assert code == 2
    assert "FAIL: assumption infima below tolerance" in out


def test_numerical_error_exit_code(tmp_path, capsys):
    # an absurdly coarse grid overflows the Riccati recursion
    spec = dataclasses.replace(scenario_preset("reversion"), sigma=0.001, d=10.0)
    cfg = tmp_path / "model.toxflow"
    cfg.write_text(dumps_config(spec))
    with np.errstate(all="ignore"):
        code, out = run(capsys, "riccati", "--config", str(cfg),
                        "--n-steps", "2", "--out", str(tmp_path))
    assert code == 1
    assert "numerical error:" in out


def test_bad_n_steps(tmp_path, capsys):
    code, out = run(capsys, "riccati", "--scenario", "reversion",
                    "--n-steps", "0", "--out", str(tmp_path))
    assert code == 2 and "--n-steps" in out

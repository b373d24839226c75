import csv
import json

import numpy as np
import pytest

from kitempc import cli
from kitempc.simulator import load_scenario


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


def read_estimates(path):
    rows = list(csv.DictReader(path.open()))
    return {k: np.array([float(r[k]) if k != "validity" else 0.0 for r in rows]) for k in rows[0]}


def test_flight1_writes_plot_data(flight1_run):
    assert flight1_run.exit_code == 0
    plots = sorted(p.name for p in (flight1_run.out / "plots").iterdir())
    assert plots == ["heading.csv", "parameters.csv", "trajectories.csv", "velocity.csv"]
    for name in plots:
        header = (flight1_run.out / "plots" / name).read_text().splitlines()[0]
        assert header.startswith("t,")


def test_flight2_summary_reports_cycles(flight2_run):
    assert flight2_run.exit_code == 0
    assert flight2_run.summary["completed_cycles"] >= 10
    assert flight2_run.summary["aborted"] is None


def test_malformed_scenario_names_field(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"duration": "three minutes"}))
    code, err = run(capsys, "simulate", "--scenario", str(bad), "--out", str(tmp_path / "o"))
    assert code == 2
    assert err["error"] == "ScenarioError" and err["field"] == "duration"


def test_bad_override_names_field(tmp_path, capsys):
    code, err = run(capsys, "simulate", "--scenario", "flight1", "--out", str(tmp_path), "--override", "mpc.H=x")
    assert code == 2 and err["field"] == "mpc.H"


def test_missing_scenario_file(tmp_path, capsys):
    code, err = run(capsys, "simulate", "--scenario", str(tmp_path / "none.json"), "--out", str(tmp_path))
    assert code == 2 and err["field"] == "--scenario"


def test_tune_reference_case(tmp_path, capsys):
    code, res = run(capsys, "tune", "--K", "1", "--t-d", "0.7", "--out", str(tmp_path))
    assert code == 0
    assert res["sup"] < 1.0
    assert res["C_0"] == pytest.approx(5.495, abs=1e-3)
    assert (tmp_path / "sweep.csv").read_text().startswith("omega,")


def test_tune_without_uncertainty_allows_faster_rate(capsys):
    _, nominal = run(capsys, "tune", "--K", "1", "--t-d", "0.7")
    _, exact = run(capsys, "tune", "--K", "1", "--t-d", "0.7", "--frac-K", "0", "--frac-td", "0")
    assert exact["l_r"] > nominal["l_r"]


def test_tune_rejects_zero_delay(capsys):
    code, err = run(capsys, "tune", "--K", "1", "--t-d", "0")
    assert code == 2 and err["field"] == "t_d"
    assert "predictor" in err["message"]


def test_tune_infeasible_exit_code(capsys):
    code, err = run(capsys, "tune", "--K", "1", "--t-d", "0.7", "--l-e", "1e-6")
    assert code == 3
    assert "sweep_csv" in err


def test_analyze_certifies_tuned_pair(capsys):
    _, res = run(capsys, "tune", "--K", "1", "--t-d", "0.7")
    code, cert = run(capsys, "analyze-robustness", "--K", "1", "--t-d", "0.7",
                     "--C0", str(res["C_0"]), "--l-r", str(res["l_r"]))
    assert code == 0 and cert["robustly_stable"] and cert["robust_performance"]


def test_identify_matched_log(tmp_path, capsys):
    out = tmp_path / "sim"
    code = cli.main(["simulate", "--scenario", "flight1", "--out", str(out),
                     "--override", "duration=12", "--override", "sigma_theta=0", "--override", "sigma_phi=0",
                     "--override", "tau_act=0", "--override", "estimation=false"])
    assert code == 0
    capsys.readouterr()
    code, res = run(capsys, "identify", str(out / "log.csv"), "--out", str(tmp_path / "est.csv"),
                    "--scheme", "forward", "--width", "1", "--window", "5")
    assert code == 0 and res["estimates"] >= 2
    est = read_estimates(tmp_path / "est.csv")
    assert np.allclose(est["alpha_L"], 0.24, atol=1e-6)
    assert np.allclose(est["alpha_G"], 0.08, atol=1e-6)
    assert np.allclose(est["K"], 0.5, atol=1e-6)
    assert np.allclose(est["t_d"], 0.7, atol=1e-6)


def test_identify_flight2_delay_follows_line_length(flight2_run, tmp_path, capsys):
    code, _ = run(capsys, "identify", str(flight2_run.out / "log.csv"), "--out", str(tmp_path / "est.csv"))
    assert code == 0
    est = read_estimates(tmp_path / "est.csv")
    sc = load_scenario("flight2")
    t = est["t"]
    steady = ((t >= 10) & (t < 50)) | (t >= 145)
    r = np.array([sc.line(x) for x in t])
    assert np.corrcoef(est["t_d"][steady], r[steady])[0, 1] > 0


def test_identify_empty_file(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    code, err = run(capsys, "identify", str(empty), "--out", str(tmp_path / "e.csv"))
    assert code == 2 and err["error"] == "SchemaError"


def test_identify_schema_mismatch(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,theta\n0,0.8\n")
    code, err = run(capsys, "identify", str(bad), "--out", str(tmp_path / "e.csv"))
    assert code == 2 and "missing columns" in err["message"]

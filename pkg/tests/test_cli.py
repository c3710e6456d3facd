import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from tailadrf.cli import main
from tailadrf.dgp import DGPSpec, generate


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def sim_csv(tmp_path):
    path = tmp_path / "sim.csv"
    assert main(["simulate", "--dgp", "sinusoidal_pareto", "--p", "0.1", "--n", "600",
                 "--seed", "3", "--out", str(path)]) == 0
    return path


def test_simulate_matches_generator(sim_csv):
    df = pd.read_csv(sim_csv, float_precision="round_trip")
    s = generate(DGPSpec("sinusoidal_pareto", 0.1, 600, 3))
    assert list(df.columns) == [f"x{j}" for j in range(s.X.shape[1])] + ["t", "y"]
    np.testing.assert_array_equal(df["t"].to_numpy(), s.T)
    np.testing.assert_array_equal(df["y"].to_numpy(), s.Y)


def test_simulate_stdout_and_global_flag_position(capsys):
    code, a, _ = run(["--seed", "5", "simulate", "--dgp", "clean", "--n", "250"], capsys)
    assert code == 0
    code, b, _ = run(["simulate", "--dgp", "clean", "--n", "250", "--seed", "5"], capsys)
    assert code == 0 and a == b
    assert a.splitlines()[0].endswith("t,y") and len(a.splitlines()) == 251


def test_fit_core_curve(sim_csv, capsys):
    code, out, _ = run(["fit", "--data", str(sim_csv), "--loss", "huber", "--grid-points", "7"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "t,theta_hat" and len(lines) == 8


def test_fit_tail_functionals_columns(capsys):
    code, out, _ = run(["fit", "--dgp", "sinusoidal_pareto", "--n", "1500", "--tail-functionals",
                        "--alpha", "0.01,0.001", "--grid-points", "5"], capsys)
    assert code == 0
    header = out.splitlines()[0].split(",")
    assert header == ["alpha", "t", "theta_w", "ey_recovered", "q_alpha", "mode", "s_alpha", "cte", "refused"]
    assert len(out.splitlines()) == 1 + 2 * 5


@pytest.mark.parametrize("baseline", ["qr", "rpwm"])
def test_fit_baselines(baseline, capsys):
    code, out, _ = run(["fit", "--dgp", "sinusoidal_pareto", "--n", "1000", "--baseline", baseline,
                        "--grid-points", "5"], capsys)
    assert code == 0
    rows = out.splitlines()[1:]
    assert len(rows) == 5 and all(f",{baseline}," in r for r in rows)


def test_fit_with_gps(capsys):
    code, out, _ = run(["fit", "--dgp", "confounded", "--n", "1500", "--tail-functionals", "--gps",
                        "--grid-points", "5"], capsys)
    assert code == 0 and len(out.splitlines()) == 6


def test_tail_report_json(tmp_path, capsys):
    rng = np.random.default_rng(0)
    path = tmp_path / "r.csv"
    pd.DataFrame({"r": rng.laplace(size=1500) + (rng.random(1500) < 0.1) * rng.pareto(2.0, 1500)}).to_csv(
        path, index=False)
    code, out, _ = run(["tail", "--residuals", str(path), "--bootstrap-b", "60"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert {"u_star", "xi_pwm", "sigma_pwm", "refused", "regime"} <= set(rep)


def test_tail_refusal_is_exit_zero(tmp_path, capsys):
    path = tmp_path / "r.csv"
    pd.DataFrame({"r": np.random.default_rng(1).normal(size=200)}).to_csv(path, index=False)
    code, out, _ = run(["tail", "--residuals", str(path), "--min-exc", "150", "--bootstrap-b", "60"], capsys)
    assert code == 0
    assert json.loads(out)["refused"] is True


def test_panel_writes_csv_and_json(tmp_path, capsys):
    out = tmp_path / "panel.csv"
    code, _, err = run(["panel", "--dgps", "clean", "--levels", "0", "--seeds", "0,1", "--n", "250",
                        "--n-oracle", "2000", "--estimators", "welsch,qr", "--bootstrap-b", "50",
                        "--out", str(out)], capsys)
    assert code == 0 and "4 cells" in err
    df = pd.read_csv(out)
    assert len(df) == 4 and list(df.columns)[:4] == ["dgp", "p", "seed", "estimator"]
    agg = json.loads((tmp_path / "panel.json").read_text())
    assert agg["estimators"]["welsch"]["cells"] == 2


def test_panel_from_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dgp_names": ["clean"], "contamination_levels": [0.0], "seeds": [2],
                               "n": 250, "n_oracle": 2000, "estimators": ["huber"],
                               "output_path": str(tmp_path / "c.csv")}))
    code, _, _ = run(["panel", "--config", str(cfg), "--bootstrap-b", "20"], capsys)
    assert code == 0 and len(pd.read_csv(tmp_path / "c.csv")) == 1


def test_ingest(tmp_path, capsys):
    src = tmp_path / "claims.csv"
    src.write_text("DrivAge,ClaimAmount,Density\n20,0,100\n35,,50\n60,3,70\n")
    code, out, err = run(["ingest", "--csv", str(src), "--t", "DrivAge", "--y", "ClaimAmount",
                          "--x", "Density", "--log1p"], capsys)
    assert code == 0
    assert json.loads(err.strip().splitlines()[-1]) == {"rows": 2, "dropped": 1, "covariates": 1, "log1p": True}
    df = pd.read_csv(pd.io.common.StringIO(out))
    np.testing.assert_allclose(df["y"], [0.0, np.log(4.0)])


def test_config_file_for_fit(tmp_path, capsys):
    cfg = tmp_path / "fit.json"
    cfg.write_text(json.dumps({"dgp": "clean", "n": 300, "grid_points": 4, "loss": "standard_l2"}))
    code, out, _ = run(["fit", "--config", str(cfg)], capsys)
    assert code == 0 and len(out.splitlines()) == 5
    cfg.write_text(json.dumps({"colour": "red"}))
    code, _, err = run(["fit", "--dgp", "clean", "--config", str(cfg)], capsys)
    assert code == 2 and "colour" in err


@pytest.mark.parametrize("argv", [
    ["fit", "--data", "/nonexistent/file.csv"],
    ["tail", "--residuals", "/nonexistent/r.csv"],
    ["panel", "--levels", "0.1"],
    ["ingest", "--csv", "/nonexistent.csv", "--t", "a", "--y", "b"],
    ["simulate", "--dgp", "clean", "--n", "0"],
    ["fit"],
])
def test_operational_errors_exit_2(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and "error" in err


def test_missing_column_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    code, _, err = run(["tail", "--residuals", str(path)], capsys)
    assert code == 2 and "'r'" in err


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--loss", "lasso", "--dgp", "clean"])
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "s.csv"
    proc = subprocess.run([sys.executable, "-m", "tailadrf", "simulate", "--dgp", "clean", "--n", "200",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(out.read_text().splitlines()) == 201

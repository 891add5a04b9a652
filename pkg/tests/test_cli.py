import json

import numpy as np
import pytest

from minkgauss.cli import main
from minkgauss.grid import load_binary


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unknown_flag_is_usage_error(capsys):
    code, _, _ = run(["solve", "--bogus"], capsys)
    assert code == 2


def test_missing_subcommand(capsys):
    assert run([], capsys)[0] == 2


def test_bad_config_file(tmp_path, capsys):
    assert run(["solve", "--config", str(tmp_path / "nope.yaml")], capsys)[0] == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    assert run(["solve", "--config", str(bad)], capsys)[0] == 2


def test_bad_grid_is_usage_error(tmp_path, capsys):
    assert run(["solve", "--R", "1", "--h", "0.3", "--out", str(tmp_path)], capsys)[0] == 2


def test_solve_hyperboloid(tmp_path, capsys):
    code, out, _ = run(["solve", "--boundary", "hyperboloid", "--R", "2", "--h", "0.05", "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["final_residual"] <= 1e-8 and rep["ok"]
    u = load_binary(tmp_path / "solution.bin")
    assert u.grid.shape == (81, 81)
    assert (tmp_path / "solution.csv").exists()
    assert (tmp_path / "solve_report.txt").read_text() == out


def test_config_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("R: 1.0\nh: 0.1\nboundary: hyperboloid\nnewton:\n  residual_tol: 1.0e-10\n")
    code, out, _ = run(["solve", "--config", str(cfg), "--f", "2.0", "--set", "newton.max_iterations=30", "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["f"] == 2.0 and rep["grid"]["R"] == 1.0 and rep["final_residual"] <= 1e-10


def test_solve_deterministic(tmp_path, capsys):
    args = ["solve", "--boundary", "hyperboloid", "--R", "1", "--h", "0.1"]
    _, a, _ = run(args + ["--out", str(tmp_path / "a")], capsys)
    _, b, _ = run(args + ["--out", str(tmp_path / "b")], capsys)
    assert a == b
    assert (tmp_path / "a" / "solution.bin").read_bytes() == (tmp_path / "b" / "solution.bin").read_bytes()


def test_solve_barrier_data(tmp_path, capsys):
    code, out, _ = run(["solve", "--R", "2", "--h", "0.1", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(out)["comparison_flags"]["sandwich_ok"]


def test_solve_from_file(tmp_path, capsys):
    run(["solve", "--boundary", "hyperboloid", "--R", "1", "--h", "0.1", "--out", str(tmp_path)], capsys)
    code, out, _ = run(
        ["solve", "--boundary", "file", "--boundary-file", str(tmp_path / "solution.bin"), "--R", "1", "--h", "0.1", "--out", str(tmp_path / "f")],
        capsys,
    )
    assert code == 0
    assert run(["solve", "--boundary", "file", "--R", "1", "--h", "0.1", "--out", str(tmp_path)], capsys)[0] == 2


def test_verification_failure_exit_code(tmp_path, capsys):
    # timelike data -> solver error -> exit 1
    cfg = tmp_path / "c.yaml"
    cfg.write_text("newton:\n  max_iterations: 1\n")
    code, _, err = run(["solve", "--config", str(cfg), "--boundary", "hyperboloid", "--f", "3", "--R", "1", "--h", "0.1", "--out", str(tmp_path)], capsys)
    assert code == 1 and "MaxIterations" in err


def test_semitrough(tmp_path, capsys):
    code, out, _ = run(["semitrough", "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert abs(rep["a"] - 0.75) < 1e-12
    assert (tmp_path / "profile.csv").exists()


def test_barriers(tmp_path, capsys):
    code, out, _ = run(["barriers", "--R", "2", "--h", "0.25", "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["defects_decreasing"] and rep["delta"] > 0
    data = np.loadtxt(tmp_path / "barriers.csv", delimiter=",", skiprows=1)
    assert data.shape == (17 * 17, 5)


def test_flow(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("R: 1.0\nh: 0.1\nflow:\n  initial: hyperboloid\n  perturb: 0.02\n  perturb_radius: 0.6\n  perturb_center: [0.0, 0.0]\n  tol: 1.0e-8\n")
    code, out, _ = run(["flow", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 0, out
    rep = json.loads(out)
    assert rep["final_residual"] <= 1e-8 and rep["fit_c3"] > 0
    assert (tmp_path / "checkpoint" / "u.bin").exists()
    # resume from the converged checkpoint: already steady
    code, out, _ = run(["flow", "--config", str(cfg), "--set", f"flow.resume={tmp_path / 'checkpoint'}", "--out", str(tmp_path / "r")], capsys)
    assert code == 0 and json.loads(out)["steps"] == json.loads((tmp_path / "flow_report.txt").read_text())["steps"]


def test_diagnose(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("R: 2.0\nh: 0.1\ndiagnose:\n  monitors: [gradient, boost]\n  radii: [10.0, 20.0]\n")
    code, out, _ = run(["diagnose", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["gradient_bound"]["ok"] and rep["boost_closeness"]["decreasing"]


def test_cli_solve_two_arcs_with_mollified_lower(tmp_path, capsys):
    # the upper barrier of a two-arc set is creased, so the data use the mollified lower barrier
    cfg = tmp_path / "two.yaml"
    cfg.write_text(
        "R: 2.0\nh: 0.1\nsmoothing_radius: 0.4\ngap_fraction: 0.0\n"
        "F:\n  caps:\n    - {center: [1.0, 0.0], radius: 0.8}\n    - {center: [-1.0, 0.0], radius: 0.8}\n"
    )
    code = main(["solve", "--config", str(cfg), "--out", str(tmp_path)])
    rep = json.loads(capsys.readouterr().out)
    assert code == 0 and rep["comparison_flags"]["sandwich_ok"] and rep["final_residual"] <= 1e-8

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from recursive_lq.cli import EXIT_ACCEPTANCE, EXIT_HYPOTHESIS, EXIT_NUMERICAL, EXIT_USAGE, run
from recursive_lq.model import ProblemSpec, TimeGrid, save_problem
from recursive_lq.problems import stochastic_suite, tanh_problem
from recursive_lq.riccati import solve_riccati


@pytest.fixture
def tanh_file(tmp_path):
    path = tmp_path / "tanh.json"
    save_problem(tanh_problem(1000), path, x=[1.0])
    return path


@pytest.fixture
def stoch_file(tmp_path):
    path = tmp_path / "stoch.json"
    save_problem(stochastic_suite(20)[1], path)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_solve_writes_tanh_value(tanh_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert run(["solve", str(tanh_file), "--out", str(out)]) == 0
    rows = _rows(out / "P.csv")
    assert rows[0] == ["s", "P_1_1"]
    assert float(rows[1][0]) == 0.0
    assert float(rows[1][1]) == pytest.approx(0.7615942, abs=1e-7)
    assert len(rows) == 1002
    assert _rows(out / "gains.csv")[0] == ["s", "Psi_1_1", "v_1"]
    assert _rows(out / "eta.csv")[0] == ["s", "eta_1"]
    assert json.loads(capsys.readouterr().out)["P0"][0][0] == pytest.approx(np.tanh(1.0), abs=1e-6)


def test_csv_round_trips_full_precision(stoch_file, tmp_path):
    out = tmp_path / "out"
    run(["solve", str(stoch_file), "--out", str(out)])
    from recursive_lq.model import load_problem, validate_problem

    P = solve_riccati(validate_problem(load_problem(stoch_file)[0])).P
    rows = _rows(out / "P.csv")[1:]
    back = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(P.shape)
    np.testing.assert_array_equal(back, P)


def test_validate_bad_problem_names_H3(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    save_problem(ProblemSpec.build(1, 1, TimeGrid(0.0, 1.0, 10), R=-1.0, Q=1.0), bad)
    assert run(["validate", str(bad)]) == EXIT_HYPOTHESIS
    assert "H3" in capsys.readouterr().err
    assert run(["validate", str(bad), "--allow-hypothesis-failures"]) == 0
    assert run(["solve", str(bad)]) == EXIT_HYPOTHESIS


def test_validate_good_problem(tanh_file, tmp_path, capsys):
    assert run(["validate", str(tanh_file), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "validation.json").read_text())
    assert doc["H3"] and doc["H4"] and doc["failures"] == []


def test_usage_errors(tanh_file, tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        run(["bogus", str(tanh_file)])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        run(["cost", str(tanh_file), "--paths", "0"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        run(["cost", str(tanh_file), "--steps", "0"])
    assert info.value.code == EXIT_USAGE
    assert run(["cost", str(tmp_path / "missing.json")]) == EXIT_USAGE
    assert run(["cost", str(tanh_file), "--control", "constant"]) == EXIT_USAGE
    assert run(["cost", str(tanh_file), "--control", "file"]) == EXIT_USAGE
    assert run(["cost", str(tanh_file), "--x", "1,2"]) == EXIT_USAGE


def test_numerical_failure_exit_code(tmp_path):
    path = tmp_path / "blow.json"
    save_problem(ProblemSpec.build(1, 1, TimeGrid(0.0, 1.0, 50), A=30.0, Q=1.0, R=1.0, G=1.0), path)
    assert run(["solve", str(path), "--out", str(tmp_path)]) == EXIT_NUMERICAL


def test_cost_report(stoch_file, tmp_path):
    assert run(["cost", str(stoch_file), "--paths", "500", "--control", "zero", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "cost.json").read_text())
    assert set(doc) == {"mean", "std_error", "n_paths", "rejected_paths"}
    assert doc["n_paths"] == 500


def test_cost_controls_agree(stoch_file, tmp_path, capsys):
    ctl = tmp_path / "u.csv"
    np.savetxt(ctl, np.full((20, 1), 0.5), delimiter=",")
    run(["cost", str(stoch_file), "--paths", "300", "--control", "constant", "--u0", "0.5"])
    a = json.loads(capsys.readouterr().out)
    run(["cost", str(stoch_file), "--paths", "300", "--control", "file", "--control-file", str(ctl)])
    b = json.loads(capsys.readouterr().out)
    assert a == b


def test_steps_override(tanh_file, tmp_path):
    assert run(["solve", str(tanh_file), "--steps", "100", "--out", str(tmp_path)]) == 0
    assert len(_rows(tmp_path / "P.csv")) == 102


def test_simulate_caps_written_paths(stoch_file, tmp_path):
    assert run(["simulate", str(stoch_file), "--paths", "50", "--traj-paths", "3", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "traj.csv")
    assert rows[0][:3] == ["path", "s", "X_1"]
    assert len(rows) == 1 + 3 * 21
    assert rows[-1][-1] == ""  # no control at the terminal node


def test_xcheck_grad_and_residual(stoch_file, tmp_path, capsys):
    assert run(["xcheck", str(stoch_file), "--paths", "1000"]) == 0
    assert json.loads(capsys.readouterr().out)["pass"] is True
    assert run(["grad-check", str(stoch_file), "--paths", "1000", "--eps", "1e-3", "--out", str(tmp_path)]) == 0
    grad = json.loads((tmp_path / "gradient.json").read_text())
    assert grad["rel_error"] <= 1e-2 and grad["eps"] == 1e-3
    assert run(["residual", str(stoch_file), "--paths", "20", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "residual.csv")
    assert rows[0] == ["node", "L2", "max"] and len(rows) == 22


def test_oracle_command(tanh_file, stoch_file, capsys):
    assert run(["oracle", str(tanh_file)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["gap"] <= 1e-3 and doc["pipeline_quadratic"] == pytest.approx(np.tanh(1.0), abs=1e-6)
    assert run(["oracle", str(stoch_file)]) == EXIT_HYPOTHESIS  # E, F nonzero: outside the oracle's reach


def test_verify_is_bitwise_reproducible(stoch_file, tmp_path, monkeypatch, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["verify", str(stoch_file), "--paths", "100000", "--seed", "7", "--problem-only"]
    assert run([*args, "--out", str(a)]) == 0
    monkeypatch.setenv("RECURSIVE_LQ_THREADS", "1")
    assert run([*args, "--out", str(b)]) == 0
    assert (a / "verify.json").read_bytes() == (b / "verify.json").read_bytes()
    table = capsys.readouterr().out
    assert "PASS" in table and "FAIL" not in table


def test_verify_failure_exit_code(tmp_path, monkeypatch):
    from recursive_lq import acceptance
    from recursive_lq.acceptance import CriterionResult

    path = tmp_path / "t.json"
    save_problem(tanh_problem(20), path)
    monkeypatch.setattr(acceptance, "problem_checks", lambda *a, **k: [CriterionResult("P1", "forced", False)])
    assert run(["verify", str(path), "--problem-only"]) == EXIT_ACCEPTANCE


def test_module_entry_point(tanh_file, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "recursive_lq", "solve", str(tanh_file), "--steps", "10", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "P.csv").exists()

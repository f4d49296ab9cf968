import csv
import json

import numpy as np
import pytest

from eetc.cli import main
from eetc.io import read_trajectory
from eetc.pipeline import ExitCode, RunConfig, run_pipeline


def _records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def _column(path, name):
    with path.open() as fh:
        return np.array([float(r[name]) for r in csv.DictReader(fh)])


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_pipeline(RunConfig(output_dir=out)), out


def test_default_run_is_exact(default_run):
    result, out = default_run
    assert result.exit_code == ExitCode.OK
    kinds = [r["kind"] for r in _records(out / "records.jsonl")]
    assert kinds == ["solve-stats", "exactness", "physical-feasibility"]
    assert result.exactness.exact
    for name in ("trajectory.csv", "speed_distance.csv", "effort_distance.csv",
                 "alpha_overlay.csv", "beta_overlay.csv"):
        assert (out / name).exists()


def test_trajectory_table(default_run):
    result, out = default_run
    spec = result.spec
    cum_t = _column(out / "trajectory.csv", "cum_time_s")
    assert abs(cum_t[-1] - spec.journey_time) <= 1e-6 * spec.journey_time
    np.testing.assert_allclose(_column(out / "trajectory.csv", "position_m"), spec.positions)


def test_overlay_series_coincide(default_run):
    _, out = default_run
    a = out / "alpha_overlay.csv"
    np.testing.assert_allclose(_column(a, "alpha_spm"), _column(a, "inv_v_spm"), atol=1e-6, rtol=0)
    b = out / "beta_overlay.csv"
    beta, v2 = _column(b, "beta_m2ps2"), _column(b, "v_squared_m2ps2")
    assert np.max(np.abs(beta - v2)) <= 1e-6


def test_audit_round_trip_is_bit_exact(default_run, tmp_path):
    result, out = default_run
    audit = run_pipeline(RunConfig(output_dir=tmp_path, trajectory=out / "trajectory.csv"))
    assert audit.exit_code == ExitCode.OK
    solved = [line for line in (out / "records.jsonl").read_text().splitlines() if '"exactness"' in line]
    assert (tmp_path / "audit.jsonl").read_text().splitlines() == solved
    back = read_trajectory(out / "trajectory.csv")
    np.testing.assert_array_equal(back.beta, result.trajectory.beta)


def test_audit_flags_inexact_trajectory(default_run, tmp_path):
    _, out = default_run
    rows = (out / "trajectory.csv").read_text().splitlines()
    head, first = rows[0].split(","), rows[1].split(",")
    first[head.index("alpha_spm")] = str(float(first[head.index("alpha_spm")]) * 1.01)
    rows[1] = ",".join(first)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(rows) + "\n")
    result = run_pipeline(RunConfig(output_dir=tmp_path, trajectory=bad))
    assert result.exit_code == ExitCode.NOT_EXACT


def test_audit_length_mismatch(default_run, tmp_path):
    _, out = default_run
    result = run_pipeline(RunConfig(output_dir=tmp_path, trajectory=out / "trajectory.csv",
                                    segment_count=50))
    assert result.exit_code == ExitCode.INPUT


def test_infeasible_schedule_emits_no_trajectory(tmp_path):
    result = run_pipeline(RunConfig(output_dir=tmp_path, journey_time=10.0))
    assert result.exit_code == ExitCode.PRIMAL_INFEASIBLE
    assert not (tmp_path / "trajectory.csv").exists()
    assert _records(tmp_path / "records.jsonl")[0]["status"] == "primal-infeasible"


def test_iteration_limit_exit_code(tmp_path):
    from eetc.ipm import SolverSettings
    result = run_pipeline(RunConfig(output_dir=tmp_path, solver=SolverSettings(max_iterations=2)))
    assert result.exit_code == ExitCode.ITERATION_LIMIT


def test_missing_input_file(tmp_path):
    result = run_pipeline(RunConfig(output_dir=tmp_path, params=tmp_path / "nope.txt"))
    assert result.exit_code == ExitCode.INPUT
    assert _records(tmp_path / "records.jsonl")[0]["stage"] == "input"


def test_oracle_needs_a_small_journey(tmp_path):
    result = run_pipeline(RunConfig(output_dir=tmp_path, run_oracle=True))
    assert result.exit_code == ExitCode.INPUT


def test_oracle_run(tmp_path):
    result = run_pipeline(RunConfig(output_dir=tmp_path, run_oracle=True, segment_count=3,
                                    journey_time=330.0, terminal_speed=None, oracle_resolution=30))
    assert result.exit_code == ExitCode.OK
    assert _records(tmp_path / "records.jsonl")[-1]["kind"] == "oracle-comparison"


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(output_dir=tmp_path, exact_tol=0.0)


# --- command line -----------------------------------------------------------

def test_cli_solve_and_audit(tmp_path, capsys):
    assert main(["solve", "-N", "40", "-o", str(tmp_path / "s")]) == 0
    assert "status optimal" in capsys.readouterr().out
    assert main(["audit", str(tmp_path / "s" / "trajectory.csv"), "-N", "40", "-o", str(tmp_path / "a")]) == 0


def test_cli_infeasible_exit_code(tmp_path):
    assert main(["solve", "-T", "10", "-o", str(tmp_path)]) == int(ExitCode.PRIMAL_INFEASIBLE)


def test_cli_terminal_flags(tmp_path):
    assert main(["solve", "-N", "30", "--free-terminal", "-o", str(tmp_path / "f")]) == 0
    assert main(["solve", "-N", "30", "--terminal-speed", "10000", "-o", str(tmp_path / "g")]) == 2


def test_cli_export_program(tmp_path):
    from eetc.conic import read_program
    path = tmp_path / "prog.txt"
    assert main(["export-program", "-N", "10", str(path)]) == 0
    assert read_program(path).shape[1] > 0


def test_cli_oracle_check(tmp_path, capsys):
    code = main(["oracle-check", "-N", "2", "-T", "330", "--free-terminal", "--resolution", "25",
                 "-o", str(tmp_path)])
    assert code == 0
    assert "oracle pass" in capsys.readouterr().out


def test_cli_rejects_unknown_verb():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2

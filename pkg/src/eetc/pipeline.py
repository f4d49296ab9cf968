"""End-to-end orchestration: load, assemble, solve, extract, audit, compare, emit.

Every stage failure maps to its own exit code (see :class:`ExitCode`) and a
diagnostic record in ``records.jsonl``. Successful runs write::

    trajectory.csv        per-segment table, 12 significant digits
    records.jsonl         solve stats, exactness, physical feasibility, oracle
    speed_distance.csv    v and the limit against position
    effort_distance.csv   F with its force and power envelopes
    alpha_overlay.csv     alpha against 1/v
    beta_overlay.csv      beta against v^2

Audit-only runs read a stored trajectory and write ``audit.jsonl``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from eetc import ipm, oracle
from eetc.conic import assemble, extract_solution, write_program
from eetc.errors import AssemblyError, EETCError
from eetc.exactness import ExactnessReport, gaps
from eetc.io import (bundled_path, load_case, load_params, quantize, read_trajectory,
                     write_columns, write_records, write_trajectory)
from eetc.model import JourneySpec, TrainParams, Trajectory, check_model_a

log = logging.getLogger(__name__)

FROM_FILE = "file"


class ExitCode(IntEnum):
    OK = 0
    INPUT = 2
    ASSEMBLY = 3
    PRIMAL_INFEASIBLE = 4
    DUAL_INFEASIBLE = 5
    ITERATION_LIMIT = 6
    NUMERICAL = 7
    NOT_EXACT = 8
    ORACLE_FAIL = 9


_STATUS_CODES = {
    ipm.PRIMAL_INFEASIBLE: ExitCode.PRIMAL_INFEASIBLE,
    ipm.DUAL_INFEASIBLE: ExitCode.DUAL_INFEASIBLE,
    ipm.ITERATION_LIMIT: ExitCode.ITERATION_LIMIT,
    ipm.NUMERICAL_FAILURE: ExitCode.NUMERICAL,
}


@dataclass
class RunConfig:
    """Inputs, overrides and toggles of one run.

    ``journey`` and ``params`` default to the bundled case. ``terminal_speed``
    keeps the journey file's value unless overridden (``None`` frees it).
    Setting ``trajectory`` switches to audit-only mode.
    """

    output_dir: Path
    journey: Path | None = None
    params: Path | None = None
    segment_count: int | None = None
    journey_time: float | None = None
    terminal_speed: float | None | str = FROM_FILE
    solver: ipm.SolverSettings = field(default_factory=ipm.SolverSettings)
    exact_tol: float = 1e-6
    feasibility_tol: float = 1e-6
    run_oracle: bool = False
    oracle_resolution: int = 60
    oracle_window_fraction: float = oracle.DEFAULT_WINDOW_FRACTION
    trajectory: Path | None = None

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        for name in ("journey", "params", "trajectory"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, Path(value))
        if not (self.exact_tol > 0 and self.feasibility_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class RunResult:
    exit_code: ExitCode
    records: list[dict]
    spec: JourneySpec | None = None
    trajectory: Trajectory | None = None
    exactness: ExactnessReport | None = None
    files: dict[str, Path] = field(default_factory=dict)


def load_inputs(config: RunConfig) -> tuple[JourneySpec, TrainParams]:
    journey = config.journey or bundled_path("default_journey.txt")
    params = load_params(config.params or bundled_path("train_params.txt"))
    spec = load_case(journey, config.segment_count, config.journey_time, config.terminal_speed)
    return spec, params


def _error(stage: str, exc: Exception) -> dict:
    return {"kind": "error", "stage": stage, "message": str(exc)}


def _finish(config: RunConfig, result: RunResult, name: str = "records.jsonl") -> RunResult:
    path = config.output_dir / name
    write_records(path, result.records)
    result.files[name] = path
    return result


def _prepare_output(config: RunConfig) -> None:
    config.output_dir.mkdir(parents=True, exist_ok=True)


def quantized(traj: Trajectory) -> Trajectory:
    """The trajectory exactly as it reads back from ``trajectory.csv``."""
    return Trajectory(*(quantize(getattr(traj, k)) for k in ("v", "alpha", "beta", "force", "energy")))


def plot_data(traj: Trajectory, spec: JourneySpec, params: TrainParams) -> dict[str, dict]:
    pos = spec.positions
    return {
        "speed_distance.csv": {"position_m": pos, "v_mps": traj.v, "limit_mps": spec.speed_limit},
        "effort_distance.csv": {
            "position_m": pos, "force_n": traj.force,
            "traction_envelope_n": np.minimum(params.f_max, params.p_traction_max * traj.alpha),
            "braking_envelope_n": -np.minimum(params.f_max, params.p_brake_max * traj.alpha),
        },
        "alpha_overlay.csv": {"position_m": pos, "alpha_spm": traj.alpha, "inv_v_spm": 1.0 / traj.v},
        "beta_overlay.csv": {"position_m": pos, "beta_m2ps2": traj.beta, "v_squared_m2ps2": traj.v ** 2},
    }


def run_audit(config: RunConfig) -> RunResult:
    """Exactness report of a stored trajectory, no solve."""
    _prepare_output(config)
    try:
        spec, _ = load_inputs(config)
        traj = read_trajectory(config.trajectory)
        if traj.segment_count != spec.segment_count:
            raise EETCError(f"trajectory has {traj.segment_count} segments, journey has {spec.segment_count}")
    except (EETCError, OSError, ValueError) as exc:
        return _finish(config, RunResult(ExitCode.INPUT, [_error("input", exc)]), "audit.jsonl")
    report = gaps(traj, spec, config.exact_tol)
    code = ExitCode.OK if report.exact else ExitCode.NOT_EXACT
    return _finish(config, RunResult(code, [report.as_record()], spec, traj, report), "audit.jsonl")


def run_pipeline(config: RunConfig) -> RunResult:
    if config.trajectory is not None:
        return run_audit(config)
    _prepare_output(config)
    records: list[dict] = []
    try:
        spec, params = load_inputs(config)
        if config.run_oracle and spec.segment_count > oracle.MAX_SEGMENTS:
            raise EETCError(f"oracle needs at most {oracle.MAX_SEGMENTS} segments, got {spec.segment_count}")
    except (EETCError, OSError, ValueError) as exc:
        return _finish(config, RunResult(ExitCode.INPUT, [_error("input", exc)]))

    try:
        prog = assemble(spec, params)
    except AssemblyError as exc:
        return _finish(config, RunResult(ExitCode.ASSEMBLY, [_error("assembly", exc)], spec))

    sol = ipm.solve(prog, config.solver)
    records.append({"kind": "solve-stats", **sol.stats.as_record()})
    log.info("solver: %s after %d iterations", sol.stats.status, sol.stats.iterations)
    if sol.stats.status != ipm.OPTIMAL:
        return _finish(config, RunResult(_STATUS_CODES[sol.stats.status], records, spec))

    traj = quantized(extract_solution(sol.x, prog.layout))
    result = RunResult(ExitCode.OK, records, spec, traj)
    path = config.output_dir / "trajectory.csv"
    write_trajectory(path, traj, spec)
    result.files["trajectory.csv"] = path
    for name, columns in plot_data(traj, spec, params).items():
        write_columns(config.output_dir / name, columns)
        result.files[name] = config.output_dir / name

    report = gaps(traj, spec, config.exact_tol)
    result.exactness = report
    records.append(report.as_record())
    physical = check_model_a(traj, spec, params, config.feasibility_tol)
    records.append({"kind": "physical-feasibility", "feasible": physical.feasible,
                    "worst_violation": physical.worst, "worst_constraint": physical.worst_constraint,
                    "tolerance": physical.tolerance})
    if not report.exact:
        result.exit_code = ExitCode.NOT_EXACT

    if config.run_oracle:
        grid = oracle.GridSpec.for_journey(spec, config.oracle_resolution, config.oracle_window_fraction)
        found = oracle.grid_search_model_a(spec, params, grid)
        objective = float(np.sum(traj.energy))
        tol = oracle.window_bound(sol.y[0], grid) + 0.01 * abs(objective)
        comparison = oracle.compare(objective, found, tol)
        records.append(comparison.as_record())
        if not comparison.passed and result.exit_code == ExitCode.OK:
            result.exit_code = ExitCode.ORACLE_FAIL
    return _finish(config, result)


def export_program(config: RunConfig, path) -> ExitCode:
    """Write the assembled conic program to ``path``."""
    try:
        spec, params = load_inputs(config)
        prog = assemble(spec, params)
    except AssemblyError as exc:
        log.error("%s", exc)
        return ExitCode.ASSEMBLY
    except (EETCError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return ExitCode.INPUT
    write_program(prog, path)
    return ExitCode.OK

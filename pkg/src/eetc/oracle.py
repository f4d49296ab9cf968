"""Brute-force grid search over the physical (non-convex) model.

Only meant for tiny journeys: every speed tuple on a per-segment grid is
evaluated, the schedule is met within a time window, and the cheapest
tuple that satisfies all physical limits wins. Its cost is an upper bound
on the true optimum up to the window's effect on the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eetc.model import JourneySpec, TrainParams, Trajectory

MAX_SEGMENTS = 6
DEFAULT_WINDOW_FRACTION = 0.005
LOW_SPEED_FRACTION = 0.2


@dataclass(frozen=True)
class GridSpec:
    """Per-segment speed grids and the schedule window (seconds)."""

    resolution: int
    lower: np.ndarray
    upper: np.ndarray
    time_window: float

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("grid resolution must be at least 2")
        if not self.time_window > 0:
            raise ValueError("time window must be positive")
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("speed bounds must be 1-D arrays of equal length")
        if not (np.all(lo > 0) and np.all(hi >= lo)):
            raise ValueError("speed bounds need 0 < lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def for_journey(cls, spec: JourneySpec, resolution: int,
                    window_fraction: float = DEFAULT_WINDOW_FRACTION) -> "GridSpec":
        """Log-spaced grid on ``[0.2 V_lim, V_lim]`` with a window of ``fraction * T``."""
        return cls(resolution, LOW_SPEED_FRACTION * spec.speed_limit, spec.speed_limit.copy(),
                   window_fraction * spec.journey_time)

    def speeds(self, segment: int) -> np.ndarray:
        return np.geomspace(self.lower[segment], self.upper[segment], self.resolution)

    def refined(self) -> "GridSpec":
        """Grid containing every current node plus the geometric midpoints."""
        return GridSpec(2 * self.resolution - 1, self.lower, self.upper, self.time_window)


@dataclass
class OracleResult:
    trajectory: Trajectory | None
    objective: float | None
    feasible_count: int
    grid: GridSpec

    @property
    def empty(self) -> bool:
        return self.trajectory is None


def grid_search_model_a(spec: JourneySpec, params: TrainParams, grid: GridSpec) -> OracleResult:
    """Cheapest grid tuple meeting the schedule window and all physical limits.

    A pinned terminal speed replaces the last segment's grid by that single
    value. Ties are broken by enumeration order (first segment slowest).
    """
    n = spec.segment_count
    if n > MAX_SEGMENTS:
        raise ValueError(f"grid search is limited to {MAX_SEGMENTS} segments, got {n}")
    if grid.lower.shape != (n,):
        raise ValueError("grid bounds must have one entry per segment")
    grids = [grid.speeds(k) for k in range(n)]
    if spec.terminal_speed is not None:
        grids[-1] = np.array([spec.terminal_speed])

    dd, m, g = spec.segment_length, params.mass, params.gravity
    best_j = np.inf
    best_tuple = None
    count = 0
    # one leading speed at a time, the remaining segments vectorized
    rest = [a.ravel() for a in np.meshgrid(*grids[1:], indexing="ij")] if n > 1 else []
    width = rest[0].size if rest else 1
    for v1 in grids[0]:
        v = np.column_stack([np.full(width, v1)] + rest)
        time = np.sum(dd / v, axis=1)
        ok = np.abs(time - spec.journey_time) <= grid.time_window
        if not np.any(ok):
            continue
        v = v[ok]
        v_prev = np.column_stack([np.zeros(v.shape[0]), v[:, :-1]])
        work = (0.5 * m * (v * v - v_prev * v_prev)
                + (params.davis_a + params.davis_b * v + params.davis_c * v * v) * dd
                + m * g * spec.altitude_delta)
        force = work / dd
        ok = np.all((np.abs(force) <= params.f_max)
                    & (force * v <= params.p_traction_max)
                    & (force * v >= -params.p_brake_max), axis=1)
        if not np.any(ok):
            continue
        count += int(np.count_nonzero(ok))
        work = work[ok]
        energy = np.maximum(work / params.eta_t, work * params.eta_b).sum(axis=1)
        k = int(np.argmin(energy))
        if energy[k] < best_j:
            best_j = float(energy[k])
            best_tuple = v[ok][k]
    if best_tuple is None:
        return OracleResult(None, None, 0, grid)
    return OracleResult(Trajectory.from_speeds(best_tuple, spec, params), best_j, count, grid)


def window_bound(time_sensitivity: float, grid: GridSpec) -> float:
    """Energy a schedule error of one window can buy, given ``|dJ/dT|``."""
    return abs(time_sensitivity) * grid.time_window


@dataclass
class Comparison:
    status: str  # "pass", "fail" or "oracle-inconclusive"
    conic_objective: float
    oracle_objective: float | None
    tolerance: float
    relative_difference: float | None

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def as_record(self) -> dict:
        return {
            "kind": "oracle-comparison",
            "status": self.status,
            "conic_objective": self.conic_objective,
            "oracle_objective": self.oracle_objective,
            "tolerance": self.tolerance,
            "relative_difference": self.relative_difference,
        }


def compare(conic_objective: float, oracle: OracleResult, tol: float) -> Comparison:
    """One-sided check: the relaxation may beat the grid, never lose to it by more than ``tol``."""
    if oracle.empty:
        return Comparison("oracle-inconclusive", conic_objective, None, tol, None)
    diff = conic_objective - oracle.objective
    rel = diff / max(1.0, abs(oracle.objective))
    status = "pass" if diff <= tol else "fail"
    return Comparison(status, conic_objective, oracle.objective, tol, rel)

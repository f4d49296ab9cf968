"""Train physics, journey discretization and feasibility checks.

All quantities are strict SI. Segment arrays are zero-based in code: entry
``k`` describes segment ``k + 1`` (the speed point at the end of that
segment). The departure state ``v0 = beta0 = 0`` is fixed boundary data and
never stored in a :class:`Trajectory`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from eetc.errors import DimensionError, ValidationError

DEFAULT_GRAVITY = 9.80665


@dataclass(frozen=True)
class TrainParams:
    """Traction-system parameters in SI units.

    ``mass`` already includes any rotary-mass allowance.
    """

    mass: float
    davis_a: float
    davis_b: float
    davis_c: float
    f_max: float
    p_traction_max: float
    p_brake_max: float
    eta_t: float
    eta_b: float
    gravity: float = DEFAULT_GRAVITY

    def __post_init__(self):
        if not self.mass > 0:
            raise ValidationError("mass must be positive")
        if not self.gravity > 0:
            raise ValidationError("gravity must be positive")
        for name in ("davis_a", "davis_b", "davis_c"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative")
        for name in ("f_max", "p_traction_max", "p_brake_max"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("eta_t", "eta_b"):
            if not 0 < getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in (0, 1]")


@dataclass(frozen=True)
class TrackProfile:
    """Piecewise-linear altitude and piecewise-constant speed limits.

    Limit ``limits[k]`` applies from ``limit_starts[k]`` up to the next start
    (or the end of the line).
    """

    positions: np.ndarray
    altitudes: np.ndarray
    limit_starts: np.ndarray
    limits: np.ndarray

    def altitude(self, d):
        return np.interp(d, self.positions, self.altitudes)

    def min_limit(self, a: float, b: float) -> float:
        """Lowest limit active anywhere in the open interval ``(a, b)``."""
        ends = np.append(self.limit_starts[1:], np.inf)
        active = (self.limit_starts < b) & (ends > a)
        return float(self.limits[active].min())

    @property
    def length(self) -> float:
        return float(self.positions[-1])


@dataclass(frozen=True)
class JourneySpec:
    """Fixed data of one journey: geometry, limits, schedule and grid.

    ``terminal_speed`` pins the final speed point when set (station stop);
    ``None`` leaves it free.
    """

    total_distance: float
    segment_count: int
    journey_time: float
    altitude_delta: np.ndarray
    speed_limit: np.ndarray
    terminal_speed: float | None = None

    def __post_init__(self):
        n = self.segment_count
        if not (isinstance(n, (int, np.integer)) and n >= 1):
            raise ValidationError("segment_count must be a positive integer")
        if not self.total_distance > 0:
            raise ValidationError("total_distance must be positive")
        if not self.journey_time > 0:
            raise ValidationError("journey_time must be positive")
        object.__setattr__(self, "altitude_delta", np.asarray(self.altitude_delta, dtype=float))
        object.__setattr__(self, "speed_limit", np.asarray(self.speed_limit, dtype=float))
        if self.altitude_delta.shape != (n,) or self.speed_limit.shape != (n,):
            raise DimensionError("altitude_delta and speed_limit need segment_count entries")
        if not np.all(np.isfinite(self.altitude_delta)):
            raise ValidationError("altitude_delta must be finite")
        if not np.all(self.speed_limit > 0):
            raise ValidationError("speed limits must be positive")
        if self.terminal_speed is not None:
            if not 0 < self.terminal_speed <= self.speed_limit[-1]:
                raise ValidationError("terminal_speed must lie in (0, final speed limit]")

    @property
    def segment_length(self) -> float:
        return self.total_distance / self.segment_count

    @property
    def positions(self) -> np.ndarray:
        """Distance of each speed point (segment end) from departure."""
        return self.segment_length * np.arange(1, self.segment_count + 1)

    @property
    def assumption1_ok(self) -> bool:
        """First segment is level (zero potential-energy change)."""
        return self.altitude_delta[0] == 0.0

    def with_time(self, journey_time: float) -> "JourneySpec":
        return replace(self, journey_time=journey_time)

    @classmethod
    def from_track(
        cls,
        track: TrackProfile,
        total_distance: float,
        segment_count: int,
        journey_time: float,
        terminal_speed: float | None = None,
    ) -> "JourneySpec":
        """Discretize ``track`` into ``segment_count`` equal segments.

        Altitude steps are taken between segment endpoints; each segment gets
        the lowest limit active anywhere inside it.
        """
        if total_distance > track.length + 1e-9:
            raise ValidationError(
                f"track covers {track.length} m but the journey needs {total_distance} m"
            )
        edges = np.linspace(0.0, total_distance, segment_count + 1)
        dh = np.diff(track.altitude(edges))
        limits = np.array([track.min_limit(a, b) for a, b in zip(edges[:-1], edges[1:])])
        return cls(total_distance, int(segment_count), journey_time, dh, limits, terminal_speed)


@dataclass
class Trajectory:
    """Per-segment decision values of the relaxed model.

    ``alpha`` is the per-metre travel time (s/m) and ``beta`` the squared
    speed surrogate (m^2/s^2).
    """

    v: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    force: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        for name in ("v", "alpha", "beta", "force", "energy"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        n = self.v.shape
        if len(n) != 1 or any(getattr(self, k).shape != n for k in ("alpha", "beta", "force", "energy")):
            raise DimensionError("trajectory vectors must be 1-D and of equal length")

    @property
    def segment_count(self) -> int:
        return self.v.shape[0]

    def copy(self) -> "Trajectory":
        return Trajectory(self.v.copy(), self.alpha.copy(), self.beta.copy(),
                          self.force.copy(), self.energy.copy())

    def segment_times(self, spec: JourneySpec) -> np.ndarray:
        return spec.segment_length * self.alpha

    def cumulative_time(self, spec: JourneySpec) -> np.ndarray:
        return np.cumsum(self.segment_times(spec))

    def cumulative_energy(self) -> np.ndarray:
        return np.cumsum(self.energy)

    @classmethod
    def from_speeds(cls, v, spec: JourneySpec, params: TrainParams) -> "Trajectory":
        """Model-A point: ``alpha = 1/v``, ``beta = v^2``, force and energy derived."""
        v = np.asarray(v, dtype=float)
        _check_length(v, spec)
        beta = v * v
        force = segment_force(np.concatenate(([0.0], beta[:-1])), v, beta,
                              spec.altitude_delta, spec, params)
        return cls(v, 1.0 / v, beta, force, electrical_energy(force, spec, params))


def _check_length(arr: np.ndarray, spec: JourneySpec) -> None:
    if arr.shape != (spec.segment_count,):
        raise DimensionError(f"expected {spec.segment_count} entries, got shape {arr.shape}")


def davis_resistance(v, params: TrainParams):
    """Running resistance ``A + B v + C v^2`` in newtons."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValidationError("speed must be non-negative")
    out = params.davis_a + params.davis_b * v + params.davis_c * v * v
    return float(out) if out.ndim == 0 else out


def segment_force(beta_prev, v, beta, dh, spec: JourneySpec, params: TrainParams):
    """Constant effort over one segment from the work balance.

    Kinetic energy change uses the ``beta`` surrogates, resistance uses
    ``A + B v + C beta``; with ``beta = v^2`` this is the physical balance.
    """
    dd = spec.segment_length
    m = params.mass
    work = (0.5 * m * (np.asarray(beta) - beta_prev)
            + (params.davis_a + params.davis_b * np.asarray(v) + params.davis_c * np.asarray(beta)) * dd
            + m * params.gravity * np.asarray(dh))
    out = work / dd
    return float(out) if np.ndim(out) == 0 else out


def electrical_energy(force, spec: JourneySpec, params: TrainParams):
    """Tight electrical energy ``max(F dd / eta_t, F dd eta_b)`` per segment."""
    work = np.asarray(force, dtype=float) * spec.segment_length
    out = np.maximum(work / params.eta_t, work * params.eta_b)
    return float(out) if out.ndim == 0 else out


def objective(traj: Trajectory) -> float:
    """Net electrical energy over the journey (J)."""
    return float(np.sum(traj.energy))


def trajectory_forces(traj: Trajectory, spec: JourneySpec, params: TrainParams) -> np.ndarray:
    """Effort implied by the relaxed work balance for every segment."""
    beta_prev = np.concatenate(([0.0], traj.beta[:-1]))
    return segment_force(beta_prev, traj.v, traj.beta, spec.altitude_delta, spec, params)


def with_derived_effort(traj: Trajectory, spec: JourneySpec, params: TrainParams) -> Trajectory:
    """Copy of ``traj`` whose force and energy are recomputed from (v, beta)."""
    force = trajectory_forces(traj, spec, params)
    return Trajectory(traj.v.copy(), traj.alpha.copy(), traj.beta.copy(), force,
                      electrical_energy(force, spec, params))


@dataclass
class FeasibilityReport:
    """Per-constraint residuals (positive means violated).

    Residuals are dimensionless except ``speed_limit`` (m/s): the schedule
    residual is relative to T, balance and energy residuals to the segment
    work scale, force bounds to F_max and power bounds to the power limit.
    """

    residuals: dict[str, np.ndarray]
    tolerance: float
    worst: float = field(init=False)
    worst_constraint: str = field(init=False)
    feasible: bool = field(init=False)

    def __post_init__(self):
        peaks = {k: float(np.max(r)) for k, r in self.residuals.items() if np.size(r)}
        name = max(peaks, key=peaks.get) if peaks else ""
        self.worst = max(0.0, peaks.get(name, 0.0))
        self.worst_constraint = name
        self.feasible = bool(self.worst <= self.tolerance)


def _balance_scale(terms: list[np.ndarray]) -> np.ndarray:
    return np.maximum(1.0, np.sum([np.abs(t) for t in terms], axis=0))


def _common_residuals(traj, spec, params):
    """Force-bound and energy-branch residuals shared by both models."""
    dd = spec.segment_length
    f = traj.force
    work = f * dd
    escale = np.maximum(1.0, np.abs(work))
    res = {
        "force_upper": (f - params.f_max) / params.f_max,
        "force_lower": (-params.f_max - f) / params.f_max,
        "energy_traction": (work / params.eta_t - traj.energy) / escale,
        "energy_braking": (work * params.eta_b - traj.energy) / escale,
    }
    return res


def check_model_a(traj: Trajectory, spec: JourneySpec, params: TrainParams,
                  tol: float = 1e-6) -> FeasibilityReport:
    """Check the physical (non-convex) model: only ``v``, ``force``, ``energy`` are used."""
    for arr in (traj.v, traj.force, traj.energy):
        _check_length(arr, spec)
    dd, m, g = spec.segment_length, params.mass, params.gravity
    v = traj.v
    if np.any(v <= 0):
        speed_pos = np.maximum(0.0, -v)
        v_safe = np.where(v > 0, v, np.inf)
    else:
        speed_pos = np.zeros_like(v)
        v_safe = v
    v_prev = np.concatenate(([0.0], v[:-1]))
    kin = 0.5 * m * (v * v - v_prev * v_prev)
    drag = davis_resistance(np.abs(v), params) * dd
    pot = m * g * spec.altitude_delta
    work = traj.force * dd
    res = _common_residuals(traj, spec, params)
    res.update({
        "time": np.array([abs(np.sum(dd / v_safe) - spec.journey_time) / spec.journey_time]),
        "energy_balance": np.abs(work - kin - drag - pot) / _balance_scale([work, kin, drag, pot]),
        "speed_limit": np.maximum(v - spec.speed_limit, speed_pos),
        "power_traction": (traj.force * v - params.p_traction_max) / params.p_traction_max,
        "power_braking": (-params.p_brake_max - traj.force * v) / params.p_brake_max,
    })
    if spec.terminal_speed is not None:
        res["terminal"] = np.array([abs(v[-1] - spec.terminal_speed)])
    return FeasibilityReport(res, tol)


def check_model_b(traj: Trajectory, spec: JourneySpec, params: TrainParams,
                  tol: float = 1e-8) -> FeasibilityReport:
    """Check the relaxed model including both relaxation inequalities."""
    for arr in (traj.v, traj.alpha, traj.beta, traj.force, traj.energy):
        _check_length(arr, spec)
    dd, m, g = spec.segment_length, params.mass, params.gravity
    v, a, b = traj.v, traj.alpha, traj.beta
    b_prev = np.concatenate(([0.0], b[:-1]))
    kin = 0.5 * m * (b - b_prev)
    drag = (params.davis_a + params.davis_b * v + params.davis_c * b) * dd
    pot = m * g * spec.altitude_delta
    work = traj.force * dd
    vlim2 = spec.speed_limit ** 2
    res = _common_residuals(traj, spec, params)
    res.update({
        "time": np.array([abs(np.sum(dd * a) - spec.journey_time) / spec.journey_time]),
        "energy_balance": np.abs(work - kin - drag - pot) / _balance_scale([work, kin, drag, pot]),
        "speed_limit": (b - vlim2) / vlim2,
        "power_traction": (traj.force - params.p_traction_max * a) / params.f_max,
        "power_braking": (-params.p_brake_max * a - traj.force) / params.f_max,
        "alpha_relaxation": 1.0 - a * v,
        "beta_relaxation": (v * v - b) / np.maximum(1.0, b),
        "positivity": np.maximum(0.0, -np.minimum(v, a)),
    })
    if spec.terminal_speed is not None:
        vt = spec.terminal_speed
        res["terminal"] = np.array([abs(v[-1] - vt), abs(b[-1] - vt * vt) / max(1.0, vt * vt)])
    return FeasibilityReport(res, tol)

"""Seeded random journeys for property tests and batch runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eetc import ipm
from eetc.conic import minimum_time_program
from eetc.errors import ValidationError
from eetc.model import JourneySpec, TrainParams

KMH = 1.0 / 3.6
MAX_GRADE = 0.030
LIMIT_CHOICES_KMH = (60.0, 70.0, 80.0)


@dataclass(frozen=True)
class ScenarioRanges:
    segments: tuple[int, int] = (20, 120)
    distance: tuple[float, float] = (3000.0, 6000.0)
    pieces: tuple[int, int] = (2, 5)
    slack: tuple[float, float] = (1.05, 1.6)


def minimum_time(spec: JourneySpec, params: TrainParams) -> float:
    """Shortest running time the limits allow (seconds)."""
    sol = ipm.solve(minimum_time_program(spec, params))
    if sol.stats.status != ipm.OPTIMAL:
        raise ValidationError(f"minimum-time solve ended with status {sol.stats.status}")
    return sol.stats.objective


def random_track(rng: np.random.Generator, n: int, distance: float, pieces: int):
    """Per-segment altitude steps and limits from a piecewise-constant profile.

    The first piece is level and every piece spans whole segments.
    """
    cuts = np.sort(rng.choice(np.arange(1, n), size=min(pieces - 1, n - 1), replace=False))
    bounds = np.concatenate([[0], cuts, [n]])
    dd = distance / n
    grade = np.empty(n)
    limit = np.empty(n)
    for k, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        grade[lo:hi] = 0.0 if k == 0 else rng.uniform(-MAX_GRADE, MAX_GRADE)
        limit[lo:hi] = rng.choice(LIMIT_CHOICES_KMH) * KMH
    return grade * dd, limit


def random_scenario(rng: np.random.Generator, params: TrainParams,
                    ranges: ScenarioRanges = ScenarioRanges()) -> JourneySpec:
    """Random journey with a free terminal speed and ``T`` a random multiple of its minimum."""
    n = int(rng.integers(ranges.segments[0], ranges.segments[1] + 1))
    distance = float(rng.uniform(*ranges.distance))
    pieces = int(rng.integers(ranges.pieces[0], ranges.pieces[1] + 1))
    dh, limit = random_track(rng, n, distance, pieces)
    probe = JourneySpec(distance, n, 1.0, dh, limit)
    t_min = minimum_time(probe, params)
    return probe.with_time(t_min * float(rng.uniform(*ranges.slack)))


def scenario_batch(seed: int, count: int, params: TrainParams,
                   ranges: ScenarioRanges = ScenarioRanges()) -> list[JourneySpec]:
    rng = np.random.default_rng(seed)
    return [random_scenario(rng, params, ranges) for _ in range(count)]

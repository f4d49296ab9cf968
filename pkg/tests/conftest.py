import numpy as np
import pytest

from eetc import ipm
from eetc.conic import assemble, extract_solution
from eetc.io import default_case, default_params
from eetc.model import JourneySpec

SEED = 20261019


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def default_spec():
    return default_case()


@pytest.fixture(scope="session")
def free_spec():
    return default_case(terminal_speed=None)


def solve_case(spec, params, settings=None):
    prog = assemble(spec, params)
    sol = ipm.solve(prog, settings)
    traj = extract_solution(sol.x, prog.layout) if sol.stats.status == ipm.OPTIMAL else None
    return prog, sol, traj


@pytest.fixture(scope="session")
def default_solution(default_spec, params):
    return solve_case(default_spec, params)


@pytest.fixture(scope="session")
def free_solution(free_spec, params):
    return solve_case(free_spec, params)


def tiny_spec(n=3, distance=1800.0, time=150.0, grade=None, limit_kmh=70.0, terminal=None):
    grade = np.zeros(n) if grade is None else np.asarray(grade, float)
    dd = distance / n
    return JourneySpec(distance, n, time, grade * dd, np.full(n, limit_kmh / 3.6), terminal)


def random_tiny_specs(seed, count, min_segments=2):
    """Small journeys (up to 4 segments) the grid search can enumerate.

    One segment is excluded by default: the schedule then pins the speed to
    D/T, which a finite grid only hits by luck.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(min_segments, 5))
        distance = float(rng.uniform(1500.0, 3000.0))
        grade = rng.uniform(-0.03, 0.03, n)
        grade[0] = 0.0
        limit = float(rng.choice([60.0, 70.0, 80.0]))
        time = distance / (limit / 3.6) * float(rng.uniform(1.3, 1.8))
        out.append(tiny_spec(n, distance, time, grade, limit))
    return out


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL verdict; lines are echoed in the terminal summary."""
    lines = request.config.stash[ACCEPTANCE]

    def emit(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

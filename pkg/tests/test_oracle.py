import numpy as np
import pytest

from eetc import oracle
from eetc.model import check_model_a

from conftest import solve_case, tiny_spec


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        oracle.GridSpec(1, np.ones(2), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        oracle.GridSpec(5, np.ones(2), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        oracle.GridSpec(5, np.array([2.0, 1.0]), np.array([1.0, 1.0]), 1.0)


def test_grid_for_journey_and_refinement():
    spec = tiny_spec(n=2, limit_kmh=72.0, time=200.0)
    grid = oracle.GridSpec.for_journey(spec, 5)
    s = grid.speeds(0)
    assert s[0] == pytest.approx(4.0) and s[-1] == pytest.approx(20.0)
    assert grid.time_window == pytest.approx(1.0)
    fine = grid.refined()
    assert fine.resolution == 9
    assert np.all(np.isin(np.round(s, 12), np.round(fine.speeds(0), 12)))


def test_single_segment_has_a_closed_form(params):
    spec = tiny_spec(n=1, distance=1000.0, time=100.0)
    grid = oracle.GridSpec.for_journey(spec, 200)
    res = oracle.grid_search_model_a(spec, params, grid)
    v = res.trajectory.v[0]
    assert abs(1000.0 / v - 100.0) <= grid.time_window
    # the cheapest admissible node is the slowest one inside the window
    inside = [u for u in grid.speeds(0) if abs(1000.0 / u - 100.0) <= grid.time_window]
    assert v == pytest.approx(min(inside))
    assert check_model_a(res.trajectory, spec.with_time(1000.0 / v), params).feasible


def test_pinned_terminal_uses_the_pin(params):
    spec = tiny_spec(n=2, distance=1200.0, time=160.0, terminal=5.0)
    res = oracle.grid_search_model_a(spec, params, oracle.GridSpec.for_journey(spec, 60))
    assert not res.empty
    assert res.trajectory.v[-1] == 5.0


def test_refined_grid_never_costs_more(params):
    spec = tiny_spec(n=3, distance=1800.0, time=150.0, grade=[0.0, 0.01, -0.01])
    grid = oracle.GridSpec.for_journey(spec, 20)
    coarse = oracle.grid_search_model_a(spec, params, grid)
    fine = oracle.grid_search_model_a(spec, params, grid.refined())
    assert fine.objective <= coarse.objective
    assert fine.feasible_count >= coarse.feasible_count


def test_empty_search_is_inconclusive(params):
    spec = tiny_spec(n=2, distance=2000.0, time=20.0)
    res = oracle.grid_search_model_a(spec, params, oracle.GridSpec.for_journey(spec, 10))
    assert res.empty
    cmp = oracle.compare(1.0, res, 0.1)
    assert cmp.status == "oracle-inconclusive" and cmp.passed


def test_too_many_segments(params):
    spec = tiny_spec(n=7)
    with pytest.raises(ValueError):
        oracle.grid_search_model_a(spec, params, oracle.GridSpec.for_journey(spec, 3))


def test_compare_is_one_sided():
    grid = oracle.GridSpec(2, np.ones(1), np.ones(1), 1.0)
    found = oracle.OracleResult(None, 100.0, 1, grid)
    found.trajectory = object()
    assert oracle.compare(50.0, found, 1.0).status == "pass"
    assert oracle.compare(100.5, found, 1.0).status == "pass"
    bad = oracle.compare(102.0, found, 1.0)
    assert bad.status == "fail" and not bad.passed
    assert bad.as_record()["relative_difference"] == pytest.approx(0.02)


def test_window_bound():
    grid = oracle.GridSpec(2, np.ones(1), np.ones(1), 0.5)
    assert oracle.window_bound(-4.0, grid) == 2.0


def test_relaxation_is_no_worse_than_the_grid(params):
    spec = tiny_spec(n=3, distance=1800.0, time=150.0, grade=[0.0, 0.01, -0.01])
    _, sol, traj = solve_case(spec, params)
    grid = oracle.GridSpec.for_journey(spec, 60)
    res = oracle.grid_search_model_a(spec, params, grid)
    tol = oracle.window_bound(sol.y[0], grid) + 0.01 * abs(res.objective)
    assert oracle.compare(float(np.sum(traj.energy)), res, tol).passed

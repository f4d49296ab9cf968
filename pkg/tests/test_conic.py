import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eetc import ipm
from eetc.conic import (FREE, NONNEG, SOC3, alpha_cone_point, assemble, beta_cone_point, census,
                        embed_trajectory, extract_solution, minimum_time_program, read_program,
                        soc3_margin, write_program)
from eetc.errors import AssemblyError, DimensionError
from eetc.model import JourneySpec, Trajectory, with_derived_effort

from conftest import tiny_spec


@pytest.mark.parametrize("n,pinned", [(1, False), (3, False), (3, True), (25, True)])
def test_census_matches_assembly(params, n, pinned):
    spec = tiny_spec(n=n, time=200.0, terminal=5.0 if pinned else None)
    prog = assemble(spec, params)
    counts = census(n, pinned)
    assert prog.shape == (counts["rows"], counts["variables"])
    assert prog.cone_count(SOC3) == counts["soc3"]
    assert prog.cone_width(FREE) == 5 * n
    assert prog.cone_width(NONNEG) == 7 * n


def test_cones_partition_variables(default_spec, params):
    prog = assemble(default_spec, params)
    covered = np.zeros(prog.shape[1], int)
    for cone in prog.cones:
        covered[cone.start:cone.stop] += 1
    assert np.all(covered == 1)


def test_objective_is_energy_sum(params):
    spec = tiny_spec(n=4)
    prog = assemble(spec, params)
    r = prog.layout.ranges["energy"]
    expected = np.zeros(prog.shape[1])
    expected[r.start:r.stop] = 1.0
    np.testing.assert_array_equal(prog.c, expected)


def test_assembly_rejects_bad_data(params):
    spec = tiny_spec(n=2)
    object.__setattr__(spec, "speed_limit", np.array([20.0, np.inf]))
    with pytest.raises(AssemblyError) as info:
        assemble(spec, params)
    assert info.value.family == "speed_limit"


def _exact_point(spec, params, rng):
    v = rng.uniform(5.0, 0.9 * spec.speed_limit)
    traj = Trajectory.from_speeds(v, spec, params)
    # schedule follows the sampled speeds
    return traj, JourneySpec(spec.total_distance, spec.segment_count,
                             float(np.sum(spec.segment_length / v)), spec.altitude_delta,
                             spec.speed_limit, spec.terminal_speed)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31 - 1), st.floats(0.0, 0.2))
def test_embedding_round_trip(n, seed, loosen):
    from eetc.io import default_params
    params = default_params()
    rng = np.random.default_rng(seed)
    base = tiny_spec(n=n, distance=400.0 * n, grade=np.concatenate(([0.0], rng.uniform(-0.01, 0.01, n - 1))))
    traj, spec = _exact_point(base, params, rng)
    loose = traj.copy()
    loose.beta = loose.beta * (1.0 + loosen * rng.uniform(0, 1, n))
    loose.beta = np.minimum(loose.beta, spec.speed_limit ** 2)
    loose = with_derived_effort(loose, spec, params)
    prog = assemble(spec, params)
    x = embed_trajectory(loose, spec, params, prog.layout)
    resid = prog.A @ x - prog.b
    size = abs(prog.A) @ np.abs(x) + np.abs(prog.b)
    assert np.max(np.abs(resid) / np.maximum(1.0, size)) < 1e-12
    back = extract_solution(x, prog.layout)
    for k in ("v", "alpha", "beta", "force", "energy"):
        np.testing.assert_array_equal(getattr(back, k), getattr(loose, k))
    soc = [c for c in prog.cones if c.kind == SOC3]
    margins = soc3_margin(np.array([x[c.start:c.stop] for c in soc]))
    assert np.all(margins >= -1e-9)


def test_extract_rejects_wrong_length(params):
    prog = assemble(tiny_spec(n=2), params)
    with pytest.raises(DimensionError):
        extract_solution(np.zeros(prog.shape[1] + 1), prog.layout)


def test_cone_points_encode_the_inequalities():
    assert soc3_margin(alpha_cone_point(0.5, 2.0)) == pytest.approx(0.0, abs=1e-15)
    assert soc3_margin(alpha_cone_point(0.6, 2.0)) > 0
    assert soc3_margin(alpha_cone_point(0.4, 2.0)) < 0
    assert soc3_margin(beta_cone_point(9.0, 3.0)) == pytest.approx(0.0, abs=1e-15)
    assert soc3_margin(beta_cone_point(8.9, 3.0)) < 0


def test_program_text_round_trip(tmp_path, default_spec, params):
    prog = assemble(default_spec, params)
    path = tmp_path / "p.txt"
    write_program(prog, path)
    back = read_program(path)
    assert back.cones == prog.cones
    np.testing.assert_array_equal(back.b, prog.b)
    np.testing.assert_array_equal(back.c, prog.c)
    np.testing.assert_array_equal(back.column_scale, prog.column_scale)
    assert (back.A != prog.A).nnz == 0


def test_read_program_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not-a-program 1\n")
    with pytest.raises(ValueError):
        read_program(path)


def test_minimum_time_program(params):
    spec = tiny_spec(n=4, distance=2000.0, time=1.0)
    sol = ipm.solve(minimum_time_program(spec, params))
    assert sol.stats.status == ipm.OPTIMAL
    # segment times use end speeds, so running at the limit is the bound
    assert sol.stats.objective >= 2000.0 / spec.speed_limit[0] * (1 - 1e-9)
    slower = spec.with_time(sol.stats.objective * 0.98)
    assert ipm.solve(assemble(slower, params)).stats.status == ipm.PRIMAL_INFEASIBLE
    looser = spec.with_time(sol.stats.objective * 1.05)
    assert ipm.solve(assemble(looser, params)).stats.status == ipm.OPTIMAL

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eetc import exactness as ex
from eetc.errors import AlreadyExactError, PerturbationError, PreconditionError
from eetc.model import Trajectory, check_model_b, objective


# --- chain primitives -------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 30.0), st.floats(0.0, 0.9))
def test_eps_v_keeps_squares_consistent(v, frac):
    eb = frac * v * v
    ev = float(ex.eps_v_from_beta(v, eb))
    assert (v - ev) ** 2 == pytest.approx(v * v - eb, rel=1e-12, abs=1e-12)
    assert 0.0 <= ev < v


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(1.0, 30.0), st.floats(0.0, 0.9))
def test_eps_alpha_preserves_product(alpha, v, frac):
    ev = frac * v
    ea = float(ex.eps_alpha_from_v(alpha, v, ev))
    assert (v - ev) * (alpha + ea) == pytest.approx(v * alpha, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_chain_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(2.0, 25.0, 200)
    eb = rng.uniform(0.05, 0.8) * v * v
    h = 1e-6 * v * v
    fd = (ex.eps_v_from_beta(v, eb + h) - ex.eps_v_from_beta(v, eb - h)) / (2 * h)
    np.testing.assert_allclose(ex.d_eps_v_d_eps_beta(v, eb), fd, rtol=1e-6)
    alpha = rng.uniform(0.5, 2.0, 200) / v
    evs = rng.uniform(0.05, 0.8, 200) * v
    h = 1e-6 * v
    fd = (ex.eps_alpha_from_v(alpha, v, evs + h) - ex.eps_alpha_from_v(alpha, v, evs - h)) / (2 * h)
    np.testing.assert_allclose(ex.d_eps_alpha_d_eps_v(alpha, v, evs), fd, rtol=1e-6)


def test_chain_derivatives_positive():
    assert ex.d_eps_v_d_eps_beta(10.0, 50.0) > 0
    assert ex.d_eps_alpha_d_eps_v(0.1, 10.0, 3.0) > 0


# --- gap report -------------------------------------------------------------

def test_gap_report_fields():
    traj = Trajectory([2.0, 4.0, 5.0], [0.5, 0.3, 0.2], [4.0, 16.5, 26.0], [0, 0, 0], [0, 0, 0])
    rep = ex.gaps(traj, tol=1e-6)
    assert rep.max_alpha_index == 2 and rep.max_alpha_gap == pytest.approx(0.2)
    assert rep.max_beta_index == 2 and rep.max_beta_gap == pytest.approx(0.5)
    assert rep.beta_n_slack == pytest.approx(1.0)
    assert rep.assumption2_note == "final beta has slack"
    assert not rep.exact
    assert rep.as_record()["kind"] == "exactness"
    assert "max_beta_index" in rep.render()


def test_final_beta_slack_does_not_decide_exactness():
    traj = Trajectory([2.0, 4.0], [0.5, 0.25], [4.0, 17.0], [0, 0], [0, 0])
    assert ex.gaps(traj).exact


def test_gaps_reject_nonpositive_speed():
    with pytest.raises(ValueError):
        ex.gaps(Trajectory([0.0], [1.0], [0.0], [0.0], [0.0]))


def test_solver_output_is_exact(default_solution, default_spec):
    _, _, traj = default_solution
    rep = ex.gaps(traj, default_spec)
    assert rep.exact and rep.assumption1_ok
    assert rep.max_abs_alpha_gap <= 1e-6 and rep.max_abs_beta_gap <= 1e-6


# --- constructions ----------------------------------------------------------

# sites where the slacked input is itself feasible (not braking, not at the limit)
TIME_SITES = (30, 45, 60, 90)
BETA_SITES = (30, 50, 66, 98)


@pytest.mark.parametrize("segment", TIME_SITES)
def test_part1_certificate(free_solution, free_spec, params, segment):
    _, _, traj = free_solution
    src = ex.with_time_slack(traj, free_spec, params, segment, 1e-3)
    assert check_model_b(src, free_spec, params, 1e-8).feasible
    cert = ex.part1_perturbation(src, free_spec, params, segment)
    assert cert.objective_after < cert.objective_before
    assert cert.feasibility.feasible
    assert cert.force_drift(free_spec, params) <= 1e-9
    assert abs(cert.alpha_sum_change()) <= 1e-10
    assert ex.verify_descent(cert, free_spec, params)
    assert list(cert.constant_segments) == list(range(2, segment + 1))


@pytest.mark.parametrize("segment", BETA_SITES)
def test_part2_certificate(free_solution, free_spec, params, segment):
    _, _, traj = free_solution
    src = ex.with_beta_slack(traj, free_spec, params, segment, 1e-3, final_slack=1e-3)
    assert check_model_b(src, free_spec, params, 1e-8).feasible
    cert = ex.part2_perturbation(src, free_spec, params, segment)
    assert cert.order == ex.PART2_ORDER
    assert cert.objective_after < cert.objective_before
    assert cert.force_drift(free_spec, params) <= 1e-9
    assert abs(cert.alpha_sum_change()) <= 1e-10
    assert ex.verify_descent(cert, free_spec, params)
    rec = cert.as_record()
    assert rec["decrease"] > 0 and rec["construction"] == "part2"


def test_exact_pivots_are_rejected(free_solution, free_spec, params):
    _, _, traj = free_solution
    with pytest.raises(AlreadyExactError):
        ex.part1_perturbation(traj, free_spec, params, 40)
    with pytest.raises(AlreadyExactError):
        ex.part2_perturbation(traj, free_spec, params, 40)


def test_part2_needs_final_slack(free_solution, free_spec, params):
    _, _, traj = free_solution
    src = ex.with_beta_slack(traj, free_spec, params, 40, 1e-3)
    with pytest.raises(PreconditionError):
        ex.part2_perturbation(src, free_spec, params, 40)


def test_pinned_final_speed_cannot_pivot(default_solution, default_spec, params):
    _, _, traj = default_solution
    src = traj.copy()
    src.alpha[-1] *= 1.01
    with pytest.raises(PreconditionError):
        ex.part1_perturbation(src, default_spec, params, default_spec.segment_count)


def test_pivot_range_checked(free_solution, free_spec, params):
    _, _, traj = free_solution
    with pytest.raises(ValueError):
        ex.part1_perturbation(traj, free_spec, params, 0)
    with pytest.raises(ValueError):
        ex.part2_perturbation(traj, free_spec, params, free_spec.segment_count)


def test_part1_shrinks_an_oversized_step(free_solution, free_spec, params):
    _, _, traj = free_solution
    src = ex.with_time_slack(traj, free_spec, params, 45, 1e-3)
    cert = ex.part1_perturbation(src, free_spec, params, 45, eps_iv=5.0)
    assert cert.shrinks > 0 and ex.verify_descent(cert, free_spec, params)


def test_verify_descent_rejects_a_tampered_certificate(free_solution, free_spec, params):
    _, _, traj = free_solution
    src = ex.with_time_slack(traj, free_spec, params, 45, 1e-3)
    cert = ex.part1_perturbation(src, free_spec, params, 45)
    cert.eps_v = -cert.eps_v
    assert not ex.verify_descent(cert, free_spec, params)


def test_perturbation_error_carries_diagnostics():
    err = PerturbationError("boom", {"pivot": 3})
    assert err.diagnostics == {"pivot": 3}


def test_slack_builders(free_solution, free_spec, params):
    _, _, traj = free_solution
    t = ex.with_time_slack(traj, free_spec, params, 45, 1e-3)
    assert ex.gaps(t).alpha_gap[44] > 0.9e-3
    b = ex.with_beta_slack(traj, free_spec, params, 45, 1e-3, final_slack=2e-3)
    g = ex.gaps(b)
    assert g.beta_gap[44] > 0 and g.beta_n_slack > 0
    assert objective(b) != objective(traj)

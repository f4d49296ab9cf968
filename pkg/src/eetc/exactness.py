"""Relaxation-gap measurement and constructive descent certificates.

A relaxed point carries *slack* at segment ``i`` when ``alpha_i v_i > 1`` or
``beta_i > v_i^2``. The constructions here turn such slack into a strictly
cheaper feasible point while holding every segment effort ``F_n dd`` fixed
except the first one, whose decrease lowers the objective.

Sign convention: certificates store signed changes (perturbed minus
original) in ``eps_v``, ``eps_alpha`` and ``eps_beta``. The chain helpers
below work with non-negative magnitudes.

Pivots are 1-based segment numbers throughout this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from eetc.errors import AlreadyExactError, PerturbationError, PreconditionError
from eetc.model import (
    FeasibilityReport,
    JourneySpec,
    TrainParams,
    Trajectory,
    check_model_b,
    objective,
    trajectory_forces,
    with_derived_effort,
)

SLACK_MARGIN = 1e-8
SHRINK_FACTOR = 0.5
MAX_SHRINKS = 60
BISECTION_ITERATIONS = 200
BISECTION_WIDTH = 1e-14
FEASIBILITY_TOL = 1e-8

PART2_ORDER = ("backward-chain", "pivot-alpha-budget", "forward-chain-bisection")


# ---------------------------------------------------------------------------
# Chain primitives
# ---------------------------------------------------------------------------

def eps_v_from_beta(v, eps_beta):
    """Speed reduction that keeps ``(v - eps_v)^2 = v^2 - eps_beta``."""
    v = np.asarray(v, dtype=float)
    return v - np.sqrt(v * v - np.asarray(eps_beta, dtype=float))


def d_eps_v_d_eps_beta(v, eps_beta):
    """Derivative of :func:`eps_v_from_beta` with respect to ``eps_beta``."""
    v = np.asarray(v, dtype=float)
    return 0.5 / np.sqrt(v * v - np.asarray(eps_beta, dtype=float))


def eps_alpha_from_v(alpha, v, eps_v):
    """Increase of ``alpha`` that keeps ``(v - eps_v)(alpha + eps_alpha) = v alpha``."""
    eps_v = np.asarray(eps_v, dtype=float)
    return np.asarray(alpha, dtype=float) * eps_v / (np.asarray(v, dtype=float) - eps_v)


def d_eps_alpha_d_eps_v(alpha, v, eps_v):
    """Derivative of :func:`eps_alpha_from_v`: ``v alpha / (v - eps_v)^2``."""
    v = np.asarray(v, dtype=float)
    return np.asarray(alpha, dtype=float) * v / (v - np.asarray(eps_v, dtype=float)) ** 2


class _Chain:
    """Backward propagation of beta reductions with constant segment effort."""

    def __init__(self, traj: Trajectory, spec: JourneySpec, params: TrainParams):
        dd = spec.segment_length
        self.v = traj.v.tolist()
        self.alpha = traj.alpha.tolist()
        self.half_m = 0.5 * params.mass
        self.keep = 0.5 * params.mass + params.davis_c * dd
        self.bdd = params.davis_b * dd

    def run(self, top: int, eps_beta_top: float, bottom: int):
        """Reduce beta at 0-based segments ``top`` down to ``bottom``.

        Returns ``(eps_beta, eps_v, eps_alpha, carry)`` where the lists are
        indexed from ``bottom`` to ``top`` and ``carry`` is the beta
        reduction segment ``bottom - 1`` must absorb to keep segment
        ``bottom``'s effort fixed. Raises ``ValueError`` when a reduction
        exceeds ``v^2``.
        """
        size = top - bottom + 1
        eb = [0.0] * size
        ev = [0.0] * size
        ea = [0.0] * size
        cur = eps_beta_top
        for n in range(top, bottom - 1, -1):
            v = self.v[n]
            rad = v * v - cur
            if not rad > 0:
                raise ValueError(f"beta reduction exceeds v^2 at segment {n + 1}")
            e_v = v - math.sqrt(rad)
            k = n - bottom
            eb[k] = cur
            ev[k] = e_v
            ea[k] = self.alpha[n] * e_v / (v - e_v)
            cur = (self.keep * cur + self.bdd * e_v) / self.half_m
        return eb, ev, ea, cur


# ---------------------------------------------------------------------------
# Gap report
# ---------------------------------------------------------------------------

@dataclass
class ExactnessReport:
    """Relaxation gaps of one trajectory.

    The final ``beta`` gap is reported on its own (``beta_n_slack``) and never
    decides ``exact``: a free terminal speed may leave it loose.
    """

    alpha_gap: np.ndarray
    beta_gap: np.ndarray
    tolerance: float
    assumption1_ok: bool | None = None
    max_alpha_gap: float = field(init=False)
    max_alpha_index: int = field(init=False)
    max_beta_gap: float = field(init=False)
    max_beta_index: int = field(init=False)
    beta_n_slack: float = field(init=False)
    assumption2_note: str = field(init=False)
    exact: bool = field(init=False)

    def __post_init__(self):
        ka = int(np.argmax(self.alpha_gap))
        self.max_alpha_gap = float(self.alpha_gap[ka])
        self.max_alpha_index = ka + 1
        inner = self.beta_gap[:-1]
        if inner.size:
            kb = int(np.argmax(inner))
            self.max_beta_gap = float(inner[kb])
            self.max_beta_index = kb + 1
        else:
            self.max_beta_gap = 0.0
            self.max_beta_index = 0
        self.beta_n_slack = float(self.beta_gap[-1])
        if self.beta_n_slack > SLACK_MARGIN:
            self.assumption2_note = "final beta has slack"
        else:
            self.assumption2_note = "final beta tight"
        self.exact = bool(self.max_alpha_gap <= self.tolerance and self.max_beta_gap <= self.tolerance)

    @property
    def max_abs_alpha_gap(self) -> float:
        return float(np.max(np.abs(self.alpha_gap)))

    @property
    def max_abs_beta_gap(self) -> float:
        """Largest ``|beta_i - v_i^2|`` over all but the final segment."""
        inner = self.beta_gap[:-1]
        return float(np.max(np.abs(inner))) if inner.size else 0.0

    def as_record(self) -> dict:
        return {
            "kind": "exactness",
            "exact": self.exact,
            "tolerance": self.tolerance,
            "max_alpha_gap": self.max_alpha_gap,
            "max_alpha_index": self.max_alpha_index,
            "max_abs_alpha_gap": self.max_abs_alpha_gap,
            "max_beta_gap": self.max_beta_gap,
            "max_beta_index": self.max_beta_index,
            "max_abs_beta_gap": self.max_abs_beta_gap,
            "beta_n_slack": self.beta_n_slack,
            "assumption1_ok": self.assumption1_ok,
            "assumption2_note": self.assumption2_note,
        }

    def render(self) -> str:
        rec = self.as_record()
        width = max(len(k) for k in rec)
        return "".join(f"{k.ljust(width)}  {_text(v)}\n" for k, v in rec.items())


def _text(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def gaps(traj: Trajectory, spec: JourneySpec | None = None, tol: float = 1e-6) -> ExactnessReport:
    """Measure ``alpha_i v_i - 1`` and ``beta_i - v_i^2`` for every segment."""
    if np.any(traj.v <= 0) or np.any(traj.alpha <= 0):
        raise ValueError("gaps need strictly positive speeds and alpha values")
    return ExactnessReport(
        traj.alpha * traj.v - 1.0,
        traj.beta - traj.v ** 2,
        tol,
        None if spec is None else spec.assumption1_ok,
    )


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

@dataclass
class PerturbationCertificate:
    """A slack-exploiting move and the evidence that it helps.

    ``constant_segments`` lists the 1-based segments whose effort the
    construction keeps fixed. ``perturbed`` is rebuilt from ``original`` and
    the stored changes, with effort and energy recomputed.
    """

    kind: str
    pivot: int
    original: Trajectory
    eps_v: np.ndarray
    eps_alpha: np.ndarray
    eps_beta: np.ndarray
    objective_before: float
    objective_after: float
    feasibility: FeasibilityReport
    constant_segments: tuple[int, ...]
    shrinks: int = 0
    order: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    def perturbed(self, spec: JourneySpec, params: TrainParams) -> Trajectory:
        return _apply(self.original, self.eps_v, self.eps_alpha, self.eps_beta, spec, params)

    def force_drift(self, spec: JourneySpec, params: TrainParams) -> float:
        """Largest relative change of ``F_n dd`` over the promised segments.

        The work balance is affine in ``(v, beta)``, so the change is the
        balance applied to the stored increments. Evaluating it that way
        avoids cancelling kinetic-energy terms that dwarf a coasting effort.
        """
        if not self.constant_segments:
            return 0.0
        dd, half_m = spec.segment_length, 0.5 * params.mass
        db = self.eps_beta
        db_prev = np.concatenate(([0.0], db[:-1]))
        change = (half_m * (db - db_prev) + params.davis_b * dd * self.eps_v
                  + params.davis_c * dd * db)
        before = trajectory_forces(self.original, spec, params) * dd
        idx = np.asarray(self.constant_segments) - 1
        return float(np.max(np.abs(change[idx]) / np.maximum(1.0, np.abs(before[idx]))))

    def alpha_sum_change(self) -> float:
        return float(np.sum(self.original.alpha + self.eps_alpha) - np.sum(self.original.alpha))

    def as_record(self) -> dict:
        return {
            "kind": "certificate",
            "construction": self.kind,
            "pivot": self.pivot,
            "objective_before": self.objective_before,
            "objective_after": self.objective_after,
            "decrease": self.objective_before - self.objective_after,
            "feasible": self.feasibility.feasible,
            "worst_violation": self.feasibility.worst,
            "worst_constraint": self.feasibility.worst_constraint,
            "constant_segments": [int(k) for k in self.constant_segments],
            "shrinks": self.shrinks,
            "order": list(self.order),
            "eps_v": self.eps_v,
            "eps_alpha": self.eps_alpha,
            "eps_beta": self.eps_beta,
        }


def _apply(traj, d_v, d_alpha, d_beta, spec, params) -> Trajectory:
    moved = Trajectory(traj.v + d_v, traj.alpha + d_alpha, traj.beta + d_beta,
                       traj.force, traj.energy)
    return with_derived_effort(moved, spec, params)


def verify_descent(cert: PerturbationCertificate, spec: JourneySpec, params: TrainParams,
                   tol: float = FEASIBILITY_TOL) -> bool:
    """True iff the perturbed point is Model-B feasible and strictly cheaper."""
    try:
        moved = cert.perturbed(spec, params)
    except (ValueError, FloatingPointError):
        return False
    if not check_model_b(moved, spec, params, tol).feasible:
        return False
    before = objective(cert.original)
    return bool(before - objective(moved) > tol * abs(before))


def _pivot_index(pivot: int, spec: JourneySpec) -> int:
    if not 1 <= pivot <= spec.segment_count:
        raise ValueError(f"pivot must lie in 1..{spec.segment_count}, got {pivot}")
    return pivot - 1


def _first_work_positive(traj, spec, params) -> None:
    work = trajectory_forces(traj, spec, params)[0] * spec.segment_length
    if not work > 0:
        raise PreconditionError(f"first-segment work must be positive, got {work:.6g} J")


def _certify(kind, pivot, traj, d_v, d_a, d_b, spec, params, constant, shrinks, order=(), diag=None):
    moved = _apply(traj, d_v, d_a, d_b, spec, params)
    return PerturbationCertificate(
        kind, pivot, traj.copy(), d_v, d_a, d_b, objective(traj), objective(moved),
        check_model_b(moved, spec, params, FEASIBILITY_TOL), tuple(constant), shrinks,
        tuple(order), diag or {},
    )


def _accept(moved: Trajectory, spec, params) -> bool:
    return check_model_b(moved, spec, params, FEASIBILITY_TOL).feasible


def part1_perturbation(traj: Trajectory, spec: JourneySpec, params: TrainParams, pivot: int,
                       eps_iv: float | None = None) -> PerturbationCertificate:
    """Spend time slack at ``pivot`` (``alpha v > 1``) to cut first-segment work.

    The pivot speed drops by ``eps_iv``; the beta reductions this forces on
    earlier segments are chosen so that every effort from segment 2 to the
    pivot stays put. Earlier segments slow down and take longer, paid for by
    the pivot's spare time. ``eps_iv`` defaults to half the speed slack
    ``v_i - 1/alpha_i`` and is halved until the moved point is feasible.
    """
    p = _pivot_index(pivot, spec)
    if spec.terminal_speed is not None and p == spec.segment_count - 1:
        raise PreconditionError("the final speed is pinned; it cannot serve as a pivot")
    v_i, a_i = float(traj.v[p]), float(traj.alpha[p])
    if not a_i * v_i > 1.0 + SLACK_MARGIN:
        raise AlreadyExactError(f"segment {pivot} has no time slack (alpha v - 1 = {a_i * v_i - 1:.3g})")
    _first_work_positive(traj, spec, params)
    eps = 0.5 * (v_i - 1.0 / a_i) if eps_iv is None else float(eps_iv)
    if not eps > 0:
        raise ValueError("eps_iv must be positive")
    chain = _Chain(traj, spec, params)
    n = spec.segment_count
    for shrink in range(MAX_SHRINKS + 1):
        d_v, d_a, d_b = np.zeros(n), np.zeros(n), np.zeros(n)
        ok = True
        if p > 0:
            start = chain.bdd * eps / chain.half_m
            try:
                eb, ev, ea, _ = chain.run(p - 1, start, 0)
            except ValueError:
                ok = False
            else:
                d_b[:p] = -np.array(eb)
                d_v[:p] = -np.array(ev)
                d_a[:p] = np.array(ea)
                # exact compensation of the alpha budget at the pivot
                d_a[p] = -math.fsum(ea)
        d_v[p] = -eps
        if ok and (v_i - eps) * (a_i + d_a[p]) >= 1.0 and v_i - eps > 0:
            moved = _apply(traj, d_v, d_a, d_b, spec, params)
            if _accept(moved, spec, params) and objective(moved) < objective(traj):
                return _certify("part1", pivot, traj, d_v, d_a, d_b, spec, params,
                                range(2, pivot + 1), shrink)
        eps *= SHRINK_FACTOR
    raise PerturbationError(
        f"no feasible part-1 move at segment {pivot} after {MAX_SHRINKS} shrinks",
        {"pivot": pivot, "last_eps_iv": eps},
    )


def _bisect(fn, lo: float, hi: float, width: float):
    """Root of an increasing-through-zero ``fn`` on ``[lo, hi]`` (sign change required)."""
    f_lo = fn(lo)
    for _ in range(BISECTION_ITERATIONS):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class _Part2:
    """Solver for the three stages of the beta-slack construction."""

    def __init__(self, traj, spec, params, p):
        self.chain = _Chain(traj, spec, params)
        self.p = p
        self.n = spec.segment_count
        self.v = traj.v
        self.alpha = traj.alpha
        self.beta = traj.beta

    # -- stage 1 and 2: backward chain and the pivot's alpha budget ----------
    def pivot_move(self, eps_beta_i: float):
        """Backward chain matched to the pivot's effort balance.

        Returns ``(u, back)`` where ``u`` is the beta reduction at the segment
        before the pivot and ``back`` the chain lists (or ``None``).
        """
        c = self.chain
        p = self.p
        if p == 0:
            return 0.0, None, 0.0, 0.0
        v_i, a_i = float(self.v[p]), float(self.alpha[p])

        def gain(u):
            _, _, ea, _ = c.run(p - 1, u, 0)
            budget = math.fsum(ea)
            if not budget < a_i:
                raise ValueError("alpha budget exceeds the pivot's alpha")
            e_v = v_i * budget / (a_i - budget)
            return c.bdd * e_v + c.half_m * u - c.keep * eps_beta_i

        hi = c.keep * eps_beta_i / c.half_m
        if not gain(0.0) < 0 or not gain(hi) >= 0:
            raise ValueError("pivot balance has no sign change")
        u = _bisect(gain, 0.0, hi, BISECTION_WIDTH * hi)
        eb, ev, ea, _ = c.run(p - 1, u, 0)
        budget = math.fsum(ea)
        e_v = v_i * budget / (a_i - budget)
        return u, (eb, ev, ea), budget, e_v

    # -- stage 3: forward chain with the alpha balance -----------------------
    def forward(self, eps_beta_n: float):
        """Forward block for a given final-segment beta reduction.

        Locates ``t`` (beta reduction at segment N-1) where the alpha gained
        on segments ``pivot+1..N-1`` equals the alpha given up at N.
        """
        c, p, last = self.chain, self.p, self.n - 1
        v_n, a_n = float(self.v[last]), float(self.alpha[last])
        t_bar = (c.keep / c.half_m) * eps_beta_n

        def at_n(t):
            e_v = (c.keep * eps_beta_n - c.half_m * t) / c.bdd
            return e_v, a_n * e_v / (v_n + e_v)

        if p == last - 1:
            # empty forward block: the pivot itself is segment N-1
            return {"t": t_bar, "eps_beta_pivot": t_bar, "block": None, "eps_v_n": 0.0,
                    "eps_alpha_n": 0.0, "f0": -at_n(0.0)[1], "fbar": 0.0}

        def balance(t):
            _, _, ea, _ = c.run(last - 1, t, p + 1)
            return math.fsum(ea) - at_n(t)[1]

        f0, fbar = balance(0.0), balance(t_bar)
        if not (f0 < 0 < fbar):
            raise PerturbationError("alpha balance lacks the required sign change",
                                    {"f0": f0, "fbar": fbar, "t_bar": t_bar})
        t = _bisect(balance, 0.0, t_bar, BISECTION_WIDTH * t_bar)
        eb, ev, ea, carry = c.run(last - 1, t, p + 1)
        e_v_n, e_a_n = at_n(t)
        return {"t": t, "eps_beta_pivot": carry, "block": (eb, ev, ea), "eps_v_n": e_v_n,
                "eps_alpha_n": e_a_n, "f0": f0, "fbar": fbar}


def part2_perturbation(traj: Trajectory, spec: JourneySpec, params: TrainParams,
                       pivot: int) -> PerturbationCertificate:
    """Spend squared-speed slack at ``pivot`` (``beta > v^2``) to cut first-segment work.

    Stages, in order: the backward chain from the pivot to segment 1; the
    pivot's alpha budget, which fixes how much the pivot speeds up; the
    forward chain to segment N, whose split between slowing segments
    ``pivot+1..N-1`` and speeding segment N is located by bisection so the
    total travel time is unchanged. The final segment's own slack absorbs the
    forward chain, so ``beta_N > v_N^2`` is required. The size of the pivot's
    beta reduction is halved until the moved point is feasible.
    """
    p = _pivot_index(pivot, spec)
    n = spec.segment_count
    if p == n - 1:
        raise ValueError("the pivot must precede the final segment")
    if params.davis_b <= 0:
        raise PreconditionError("the forward chain needs a positive linear resistance term")
    slack_i = float(traj.beta[p] - traj.v[p] ** 2)
    if not slack_i > SLACK_MARGIN:
        raise AlreadyExactError(f"segment {pivot} has no squared-speed slack ({slack_i:.3g})")
    slack_n = float(traj.beta[-1] - traj.v[-1] ** 2)
    if not slack_n > SLACK_MARGIN:
        raise PreconditionError(f"the final segment has no squared-speed slack ({slack_n:.3g})")
    _first_work_positive(traj, spec, params)

    solver = _Part2(traj, spec, params, p)
    keep_ratio = solver.chain.keep / solver.chain.half_m
    target = 0.5 * slack_i
    diag: dict = {}
    for shrink in range(MAX_SHRINKS + 1):
        try:
            u, back, budget, e_v_i = solver.pivot_move(target)
            # outer match: the forward block must absorb exactly `target`
            if p == n - 2:
                e_bn = target / keep_ratio
            else:
                cap = 0.5 * slack_n

                def mismatch(e):
                    if e == 0.0:
                        return -target
                    return solver.forward(e)["eps_beta_pivot"] - target

                if not mismatch(cap) >= 0:
                    raise ValueError("final-segment slack too small for this pivot move")
                e_bn = _bisect(mismatch, 0.0, cap, BISECTION_WIDTH * cap)
            fw = solver.forward(e_bn)
        except ValueError as exc:
            diag = {"reason": str(exc), "eps_beta_pivot": target}
            target *= SHRINK_FACTOR
            continue

        d_v, d_a, d_b = np.zeros(n), np.zeros(n), np.zeros(n)
        if back is not None:
            eb, ev, ea = back
            d_b[:p] = -np.array(eb)
            d_v[:p] = -np.array(ev)
            d_a[:p] = np.array(ea)
        d_b[p] = -fw["eps_beta_pivot"]
        d_v[p] = e_v_i
        d_a[p] = -budget
        if fw["block"] is not None:
            eb, ev, ea = fw["block"]
            d_b[p + 1:n - 1] = -np.array(eb)
            d_v[p + 1:n - 1] = -np.array(ev)
            d_a[p + 1:n - 1] = np.array(ea)
            d_a[n - 1] = -math.fsum(ea)
        else:
            d_a[n - 1] = -fw["eps_alpha_n"]
        d_b[n - 1] = -e_bn
        d_v[n - 1] = fw["eps_v_n"]

        pivot_ok = (traj.v[p] + d_v[p]) ** 2 <= traj.beta[p] + d_b[p]
        final_ok = (traj.v[-1] + d_v[-1]) ** 2 <= traj.beta[-1] + d_b[-1]
        if pivot_ok and final_ok:
            moved = _apply(traj, d_v, d_a, d_b, spec, params)
            if _accept(moved, spec, params) and objective(moved) < objective(traj):
                diag = {"t": fw["t"], "f0": fw["f0"], "fbar": fw["fbar"], "u": u,
                        "eps_beta_n": e_bn}
                return _certify("part2", pivot, traj, d_v, d_a, d_b, spec, params, range(2, n + 1),
                                shrink, PART2_ORDER, diag)
        diag = {"reason": "moved point infeasible", "eps_beta_pivot": target}
        target *= SHRINK_FACTOR
    raise PerturbationError(f"no feasible part-2 move at segment {pivot} after {MAX_SHRINKS} shrinks",
                            diag)


# ---------------------------------------------------------------------------
# Slack construction (for building audit inputs from exact points)
# ---------------------------------------------------------------------------

def with_time_slack(traj: Trajectory, spec: JourneySpec, params: TrainParams, segment: int,
                    slack: float) -> Trajectory:
    """Exact point made loose in ``alpha v >= 1`` at ``segment``.

    The speed at ``segment`` rises by the factor ``1 + slack`` with alpha and
    the schedule untouched, so ``alpha v - 1`` becomes about ``slack``;
    ``beta`` follows ``v^2`` and effort and energy are recomputed.
    """
    k = _pivot_index(segment, spec)
    out = traj.copy()
    out.v[k] *= 1.0 + slack
    out.beta[k] = out.v[k] ** 2
    return with_derived_effort(out, spec, params)


def with_beta_slack(traj: Trajectory, spec: JourneySpec, params: TrainParams, segment: int,
                    slack: float, final_slack: float | None = None) -> Trajectory:
    """Exact point made loose in ``beta >= v^2`` at ``segment`` (and optionally at N).

    ``beta`` grows by the relative amount ``slack``; effort and energy are
    recomputed from the work balance.
    """
    k = _pivot_index(segment, spec)
    out = traj.copy()
    out.beta[k] *= 1.0 + slack
    if final_slack is not None:
        out.beta[-1] *= 1.0 + final_slack
    return with_derived_effort(out, spec, params)

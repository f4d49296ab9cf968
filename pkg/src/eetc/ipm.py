"""Homogeneous self-dual interior-point solver for free/nonneg/soc3 programs.

Solves the primal-dual pair::

    minimize    c'x              maximize   b'y
    subject to  A x = b          subject to A'y + s = c
                x in K                      s in K*

with ``K`` a product of a free block (``K* = {0}``), a nonnegative orthant
and 3-dimensional second-order cones ``sqrt(u0^2 + u1^2) <= u2``.

The iteration is a Mehrotra predictor-corrector on the homogeneous
embedding ``A x = b tau``, ``A'y + s = c tau``, ``b'y - c'x = kappa`` with
Nesterov-Todd scaling. Newton systems are quasi-definite and factored with
a sparse LDL' (QDLDL) after static regularization; solves are refined
iteratively against the unregularized matrix while that keeps helping.

Convergence is judged on the original data::

    primal  |Ax - b| / (1 + |b|)
    dual    |A'y + s - c| / (1 + max(|c|, |A'y|, |s|))
    gap     |c'x - b'y| / (1 + |c'x|)

The dual measure is scaled by the size of its terms: with multipliers much
larger than ``c`` a ``1 + |c|`` denominator sits below double precision.

Before equilibration the columns can be seeded with typical variable
magnitudes (``ConicProgram.column_scale``); rows are then normalized only.

A factorization is accepted on its backward error. The dual step comes
from the linearized dual equation unless that cuts the step length in half
compared with the complementarity form. Steps back off until the new point
is strictly interior. Residuals are also measured with ``s`` replaced by the
projection of ``c - A'y`` onto ``K*``, and the better of the two is kept.
After convergence a few polishing steps lower complementarity; the reported
point is the converged iterate with the smallest ``mu``.

Internally every second-order block is stored head first, i.e. as
``(u2, u0, u1)``, so the Jordan-algebra formulas read in their usual form.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import qdldl
import scipy.sparse as sp

from eetc.conic import FREE, NONNEG, SOC3, ConicProgram

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal-infeasible"
DUAL_INFEASIBLE = "dual-infeasible"
ITERATION_LIMIT = "iteration-limit"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 200
    feasibility_tol: float = 1e-9
    gap_tol: float = 1e-9
    infeasibility_tol: float = 1e-8
    step_fraction: float = 0.99
    static_regularization: float = 1e-10
    regularization_retries: int = 6
    ruiz_passes: int = 25
    polish_iterations: int = 8

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.polish_iterations < 0:
            raise ValueError("polish_iterations must be nonnegative")
        for name in ("feasibility_tol", "gap_tol", "infeasibility_tol", "static_regularization"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")


@dataclass
class SolveStats:
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    status: str
    objective: float = float("nan")
    tau: float = float("nan")
    kappa: float = float("nan")
    solve_seconds: float = 0.0
    message: str = ""

    def __post_init__(self):
        self.iterations = int(self.iterations)
        for name in ("primal_residual", "dual_residual", "gap", "objective", "tau", "kappa"):
            setattr(self, name, float(getattr(self, name)))

    def as_record(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "gap": self.gap,
            "objective": self.objective,
            "tau": self.tau,
            "kappa": self.kappa,
            "solve_seconds": self.solve_seconds,
            "message": self.message,
        }


class Solution(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    stats: SolveStats


class NotInteriorError(ValueError):
    """A cone block handed to the scaling routine is not strictly interior."""


# ---------------------------------------------------------------------------
# Cone algebra (second-order blocks are arrays of shape (k, 3), head first)
# ---------------------------------------------------------------------------

def _det(u):
    # factored form loses less near the boundary than u0^2 - |u1|^2
    r = np.hypot(u[:, 1], u[:, 2])
    return (u[:, 0] - r) * (u[:, 0] + r)


def _jordan(u, v):
    head = np.einsum("ij,ij->i", u, v)
    return np.column_stack([head, u[:, :1] * v[:, 1:] + v[:, :1] * u[:, 1:]])


def _arrow_solve(lam, r):
    """Solve ``lam o x = r`` for ``x``."""
    head = (lam[:, 0] * r[:, 0] - np.einsum("ij,ij->i", lam[:, 1:], r[:, 1:])) / _det(lam)
    tail = (r[:, 1:] - head[:, None] * lam[:, 1:]) / lam[:, :1]
    return np.column_stack([head, tail])


@dataclass
class SocScaling:
    """NT scaling of many soc3 blocks: ``W = eta * H(wbar)`` with ``det(wbar) = 1``."""

    eta: np.ndarray
    wbar: np.ndarray

    def apply(self, u, inverse: bool = False):
        w0, w1 = self.wbar[:, 0], self.wbar[:, 1:]
        sgn = -1.0 if inverse else 1.0
        dot = np.einsum("ij,ij->i", w1, u[:, 1:])
        head = w0 * u[:, 0] + sgn * dot
        tail = sgn * u[:, :1] * w1 + u[:, 1:] + (dot / (1.0 + w0))[:, None] * w1
        out = np.column_stack([head, tail])
        return out / self.eta[:, None] if inverse else out * self.eta[:, None]

    def matrices(self) -> np.ndarray:
        """Dense ``W`` blocks, shape (k, 3, 3)."""
        w0, w1 = self.wbar[:, 0], self.wbar[:, 1:]
        k = w0.shape[0]
        W = np.empty((k, 3, 3))
        W[:, 0, 0] = w0
        W[:, 0, 1:] = w1
        W[:, 1:, 0] = w1
        W[:, 1:, 1:] = np.eye(2) + w1[:, :, None] * w1[:, None, :] / (1.0 + w0)[:, None, None]
        return W * self.eta[:, None, None]

    def hessians(self) -> np.ndarray:
        """``W^2 = eta^2 (2 wbar wbar' - J)`` blocks, shape (k, 3, 3)."""
        J = np.diag([1.0, -1.0, -1.0])
        return (self.eta ** 2)[:, None, None] * (
            2.0 * self.wbar[:, :, None] * self.wbar[:, None, :] - J)


def _soc_scaling(z, s) -> SocScaling:
    dz, ds = _det(z), _det(s)
    if np.any(z[:, 0] <= 0) or np.any(s[:, 0] <= 0) or np.any(dz <= 0) or np.any(ds <= 0):
        raise NotInteriorError("soc3 block is not strictly interior")
    zb = z / np.sqrt(dz)[:, None]
    sb = s / np.sqrt(ds)[:, None]
    gamma = np.sqrt(0.5 * (1.0 + np.einsum("ij,ij->i", zb, sb)))
    jz = zb * np.array([1.0, -1.0, -1.0])
    wbar = (sb + jz) / (2.0 * gamma)[:, None]
    return SocScaling((ds / dz) ** 0.25, wbar)


@dataclass
class ScalingBlock:
    """Scaling data for one cone block.

    For ``nonneg`` blocks ``w`` holds the diagonal; for ``soc3`` blocks
    ``matrix`` is the symmetric 3x3 ``W`` (original coordinate order) and
    ``w`` the NT scaling point in the same order.
    """

    kind: str
    w: np.ndarray
    matrix: np.ndarray


_HEAD_FIRST = [2, 0, 1]
_HEAD_LAST = [1, 2, 0]


def nt_scaling(s_block, z_block, cone_kind: str) -> ScalingBlock:
    """Nesterov-Todd scaling with ``W z = W^{-T} s`` for one block."""
    s = np.asarray(s_block, dtype=float)
    z = np.asarray(z_block, dtype=float)
    if cone_kind == NONNEG:
        if np.any(s <= 0) or np.any(z <= 0):
            raise NotInteriorError("nonneg block is not strictly interior")
        w = np.sqrt(s / z)
        return ScalingBlock(NONNEG, w, np.diag(w))
    if cone_kind == SOC3:
        sc = _soc_scaling(z[_HEAD_FIRST][None, :], s[_HEAD_FIRST][None, :])
        W = sc.matrices()[0][np.ix_(_HEAD_LAST, _HEAD_LAST)]
        point = (sc.eta[0] * sc.wbar[0])[_HEAD_LAST]
        return ScalingBlock(SOC3, point, W)
    raise ValueError(f"no scaling for cone kind '{cone_kind}'")


def _soc_max_step(u, d):
    """Largest ``t`` with ``u + t d`` in the cone (``inf`` if unbounded)."""
    a = d[:, 0] ** 2 - d[:, 1] ** 2 - d[:, 2] ** 2
    bq = u[:, 0] * d[:, 0] - u[:, 1] * d[:, 1] - u[:, 2] * d[:, 2]
    c = np.maximum(_det(u), 0.0)
    disc = np.maximum(bq * bq - a * c, 0.0)
    root = np.sqrt(disc)
    out = np.full(u.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = a < 0
        pos_b = neg & (bq > 0)
        out = np.where(neg & ~pos_b, c / (root - bq), out)
        out = np.where(pos_b, (bq + root) / (-a), out)
        closing = (~neg) & (bq < 0)
        out = np.where(closing, c / (root - bq), out)
        head = np.where(d[:, 0] < 0, -u[:, 0] / d[:, 0], np.inf)
    return float(np.min(np.minimum(out, head))) if out.size else np.inf


# ---------------------------------------------------------------------------
# Program preprocessing
# ---------------------------------------------------------------------------

@dataclass
class _Structure:
    free: np.ndarray
    lin: np.ndarray
    soc: np.ndarray  # (k, 3) head-first variable indices

    @property
    def degree(self) -> int:
        return self.lin.size + self.soc.shape[0]


def _structure(prog: ConicProgram) -> _Structure:
    free, lin, soc = [], [], []
    for cone in prog.cones:
        idx = np.arange(cone.start, cone.stop)
        if cone.kind == FREE:
            free.append(idx)
        elif cone.kind == NONNEG:
            lin.append(idx)
        elif cone.kind == SOC3:
            if cone.width != 3:
                raise ValueError("soc3 cones must have width 3")
            soc.append(idx[_HEAD_FIRST])
        else:
            raise ValueError(f"unsupported cone kind '{cone.kind}'")
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return _Structure(cat(free), cat(lin), np.array(soc, dtype=np.int64).reshape(-1, 3))


def _ruiz(A: sp.csc_matrix, st: _Structure, passes: int, column_scale=None):
    """Row/column equilibration keeping each soc3 block on one column scale.

    When ``column_scale`` (typical variable magnitudes) is supplied the
    columns are fixed to it and only the rows are normalized: equilibrating
    columns as well would undo the magnitude information.
    """
    m, n = A.shape
    D = np.ones(m)
    E = np.ones(n)
    fixed_columns = column_scale is not None
    if fixed_columns:
        E = np.asarray(column_scale, dtype=float).copy()
        if E.shape != (n,) or not np.all(E > 0):
            raise ValueError("column_scale must hold one positive entry per variable")
        if st.soc.size:
            E[st.soc] = E[st.soc].max(axis=1, keepdims=True)
    M = (A @ sp.diags(E)).tocsc()
    for _ in range(passes):
        absM = abs(M)
        rmax = np.asarray(absM.max(axis=1).todense()).ravel()
        rmax[rmax == 0] = 1.0
        if fixed_columns:
            cmax = np.ones(n)
        else:
            cmax = np.asarray(absM.max(axis=0).todense()).ravel()
            if st.soc.size:
                cmax[st.soc] = cmax[st.soc].max(axis=1, keepdims=True)
            cmax[cmax == 0] = 1.0
        if max(np.abs(1 - rmax).max(), np.abs(1 - cmax).max()) < 1e-3:
            break
        dr = 1.0 / (rmax if fixed_columns else np.sqrt(rmax))
        dc = 1.0 / np.sqrt(cmax)
        D *= dr
        E *= dc
        M = sp.diags(dr) @ M @ sp.diags(dc)
    return sp.csc_matrix(M), D, E


def _dual_scale(c, aty, s) -> float:
    # Terms of size |A'y| carry rounding of order eps*|A'y|; normalizing by
    # |c| alone would demand more digits than a double holds whenever the
    # multipliers dwarf the cost vector.
    return 1.0 + max(np.linalg.norm(c), np.linalg.norm(aty), np.linalg.norm(s))


def _project_dual(v, st) -> np.ndarray:
    """Euclidean projection onto ``K*``: zero on free entries, clipped elsewhere."""
    out = np.zeros_like(v)
    out[st.lin] = np.maximum(v[st.lin], 0.0)
    if st.soc.size:
        b = v[st.soc]
        t, r = b[:, 0], np.hypot(b[:, 1], b[:, 2])
        inside = r <= t
        scale = np.where(inside, 1.0, np.where(r <= -t, 0.0, 0.5 * (t + r)))
        head = np.where(inside, t, scale)
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(inside[:, None], b[:, 1:], (scale / np.where(r > 0, r, 1.0))[:, None] * b[:, 1:])
        out[st.soc] = np.column_stack([head, tail])
    return out


def residuals(prog: ConicProgram, x, y, s) -> tuple[float, float, float]:
    """Normalized primal, dual and gap residuals of a candidate solution."""
    x, y, s = (np.asarray(a, dtype=float) for a in (x, y, s))
    m, n = prog.shape
    if x.shape != (n,) or s.shape != (n,) or y.shape != (m,):
        raise ValueError(f"dimension mismatch: expected x,s of {n} and y of {m}")
    A = prog.A
    pres = np.linalg.norm(A @ x - prog.b) / (1.0 + np.linalg.norm(prog.b))
    aty = A.T @ y
    dres = np.linalg.norm(aty + s - prog.c) / _dual_scale(prog.c, aty, s)
    pobj = prog.c @ x
    gap = abs(pobj - prog.b @ y) / (1.0 + abs(pobj))
    return float(pres), float(dres), float(gap)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

# fraction of the complementarity-form step the dual-equation step must keep
_DS_EQ_KEEP = 0.5


class _KKT:
    """Quasi-definite Newton matrix ``[[-(H + d I), A'], [A, d I]]``."""

    def __init__(self, A: sp.csc_matrix, st: _Structure):
        self.A = A
        self.m, self.n = A.shape
        self.st = st
        coo = A.tocoo()
        self.a_rows = coo.row + self.n
        self.a_cols = coo.col
        self.a_vals = coo.data
        k = st.soc.shape[0]
        self.h_rows = np.repeat(st.soc, 3, axis=1).ravel() if k else np.zeros(0, dtype=np.int64)
        self.h_cols = np.tile(st.soc, (1, 3)).ravel() if k else np.zeros(0, dtype=np.int64)

    def factor(self, h_lin, h_soc, reg):
        n, m = self.n, self.m
        diag_h = np.zeros(n)
        diag_h[self.st.lin] = h_lin
        rows = np.concatenate([self.h_rows, np.arange(n), self.a_rows, self.a_cols, np.arange(n, n + m)])
        cols = np.concatenate([self.h_cols, np.arange(n), self.a_cols, self.a_rows, np.arange(n, n + m)])
        vals0 = np.concatenate([-h_soc.ravel(), -diag_h, self.a_vals, self.a_vals, np.zeros(m)])
        self.K0 = sp.csc_matrix((vals0, (rows, cols)), shape=(n + m, n + m))
        self.k_norm = abs(self.K0).max() + reg
        self.reg_diag = np.concatenate([np.full(n, -reg), np.full(m, reg)])
        Kreg = (self.K0 + sp.diags(self.reg_diag)).tocsc()
        self.solver = qdldl.Solver(sp.triu(Kreg, format="csc"), upper=True)

    def solve(self, rx, ry, passes: int = 10):
        r = np.concatenate([rx, ry])
        scale = 1.0 + np.linalg.norm(r)
        d = self.solver.solve(r)
        res = r - self.K0 @ d
        err = np.linalg.norm(res) / scale
        for _ in range(passes):
            if err < 1e-13:
                break
            cand = d + self.solver.solve(res)
            res_c = r - self.K0 @ cand
            err_c = np.linalg.norm(res_c) / scale
            if not err_c < 0.9 * err:
                break
            d, res, err = cand, res_c, err_c
        # backward error: H grows without bound near the cone boundary, so a
        # forward residual says little about the factor's quality
        backward = np.linalg.norm(res) / (self.k_norm * np.linalg.norm(d) + np.linalg.norm(r))
        return d[:self.n], d[self.n:], backward


def _interior(it, st) -> bool:
    if not (it.tau > 0 and it.kappa > 0 and np.all(np.isfinite(it.x)) and np.all(np.isfinite(it.y))):
        return False
    for u in (it.x, it.s):
        if np.any(u[st.lin] <= 0):
            return False
        if st.soc.size:
            b = u[st.soc]
            if np.any(b[:, 0] <= 0) or np.any(_det(b) <= 0):
                return False
    return True


class _Iterate:
    def __init__(self, x, y, s, tau, kappa):
        self.x, self.y, self.s, self.tau, self.kappa = x, y, s, tau, kappa


def solve(prog: ConicProgram, settings: SolverSettings | None = None,
          trace: Callable[[dict], None] | None = None) -> Solution:
    """Solve ``prog``; on ``optimal`` the returned (x, y, s) meet all tolerances."""
    # degenerate directions are caught by the finiteness checks below
    with np.errstate(divide="ignore", invalid="ignore"):
        return _solve(prog, settings or SolverSettings(), trace)


def _solve(prog: ConicProgram, settings: SolverSettings, trace) -> Solution:
    t_start = time.perf_counter()
    st = _structure(prog)
    A0 = prog.A
    m, n = A0.shape
    A, D, E = _ruiz(A0, st, settings.ruiz_passes, prog.column_scale)
    b_s = D * prog.b
    c_s = E * prog.c
    sig_b = max(1.0, np.abs(b_s).max(initial=0.0))
    sig_c = max(1.0, np.abs(c_s).max(initial=0.0))
    b_s /= sig_b
    c_s /= sig_c

    def unscale(it: _Iterate):
        x = E * it.x * sig_b
        y = D * it.y * sig_c
        s = it.s / E * sig_c
        return x, y, s

    # unit cone-interior start
    x = np.zeros(n)
    s = np.zeros(n)
    x[st.lin] = 1.0
    s[st.lin] = 1.0
    if st.soc.size:
        x[st.soc[:, 0]] = 1.0
        s[st.soc[:, 0]] = 1.0
    it = _Iterate(x, np.zeros(m), s, 1.0, 1.0)
    nu = st.degree
    kkt = _KKT(A, st)
    norm_b0 = 1.0 + np.linalg.norm(prog.b)

    best = None
    stats = None
    # once converged, extra steps drive complementarity further down; the
    # returned point is the converged iterate with the smallest mu
    converged = None
    polished = 0
    reg = settings.static_regularization

    for k in range(settings.max_iterations + 1):
        xo, yo, so = unscale(it)
        pres = np.linalg.norm(A0 @ xo - prog.b * it.tau) / it.tau / norm_b0
        aty = A0.T @ yo
        dres = (np.linalg.norm(aty + so - prog.c * it.tau)
                / (it.tau * _dual_scale(prog.c, aty / it.tau, so / it.tau)))
        # s is determined by y up to the cone constraint; the projected
        # candidate sheds rounding the iterate's own s has accumulated
        s_proj = _project_dual(prog.c * it.tau - aty, st)
        dres_proj = (np.linalg.norm(aty + s_proj - prog.c * it.tau)
                     / (it.tau * _dual_scale(prog.c, aty / it.tau, s_proj / it.tau)))
        if dres_proj < dres:
            so, dres = s_proj, dres_proj
        pobj = prog.c @ xo / it.tau
        dobj = prog.b @ yo / it.tau
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        mu = (it.x[st.lin] @ it.s[st.lin]
              + (np.einsum("ij,ij->", it.x[st.soc], it.s[st.soc]) if st.soc.size else 0.0)
              + it.tau * it.kappa) / (nu + 1)
        merit = max(pres, dres, gap)
        if best is None or merit < best[0]:
            best = (merit, _Iterate(xo / it.tau, yo / it.tau, so / it.tau, it.tau, it.kappa),
                    (pres, dres, gap, pobj))
        status = None
        if pres <= settings.feasibility_tol and dres <= settings.feasibility_tol and gap <= settings.gap_tol:
            status = OPTIMAL
        else:
            by = prog.b @ yo
            cx = prog.c @ xo
            if by > 0 and np.linalg.norm(A0.T @ yo + so) / by <= settings.infeasibility_tol:
                status = PRIMAL_INFEASIBLE
            elif cx < 0 and np.linalg.norm(A0 @ xo) / (-cx) <= settings.infeasibility_tol:
                status = DUAL_INFEASIBLE
        if trace is not None:
            trace({"iteration": k, "primal_residual": pres, "dual_residual": dres, "gap": gap,
                   "mu": mu, "tau": it.tau, "kappa": it.kappa, "objective": pobj,
                   "step": None if k == 0 else last_step})
        if status == OPTIMAL:
            if converged is None or mu < converged[0]:
                converged = (mu, xo / it.tau, yo / it.tau, so / it.tau,
                             SolveStats(k, pres, dres, gap, OPTIMAL, pobj, it.tau, it.kappa))
            if polished >= settings.polish_iterations:
                break
            polished += 1
        elif status is not None:
            xr, yr, sr = xo, yo, so
            stats = SolveStats(k, pres, dres, gap, status, pobj, it.tau, it.kappa)
            break
        if k == settings.max_iterations:
            break

        # --- scaling ---
        try:
            w_lin = np.sqrt(it.s[st.lin] / it.x[st.lin])
            lam_lin = np.sqrt(it.s[st.lin] * it.x[st.lin])
            if st.soc.size:
                sc = _soc_scaling(it.x[st.soc], it.s[st.soc])
                lam_soc = sc.apply(it.x[st.soc])
                h_soc = sc.hessians()
            else:
                sc, lam_soc, h_soc = None, np.zeros((0, 3)), np.zeros((0, 3, 3))
        except (NotInteriorError, FloatingPointError):
            stats = _failure(k, best, "iterate left the cone interior")
            break

        # residuals of the scaled embedding
        r_p = b_s * it.tau - A @ it.x
        r_d = c_s * it.tau - A.T @ it.y - it.s
        r_g = c_s @ it.x - b_s @ it.y + it.kappa

        ok = False
        reg = settings.static_regularization
        for _attempt in range(settings.regularization_retries):
            try:
                kkt.factor(w_lin ** 2, h_soc, reg)
            except RuntimeError:
                # qdldl refuses a matrix that lost quasi-definiteness
                reg *= 100.0
                continue
            x1, y1, err = kkt.solve(c_s, b_s)
            if np.all(np.isfinite(x1)) and np.all(np.isfinite(y1)) and err < 1e-10:
                ok = True
                break
            reg *= 100.0
        if not ok:
            stats = _failure(k, best, "KKT factorization failed after regularization retries")
            break

        def direction(sigma, rc_lin, rc_soc, r_tk):
            # W (lam \ r_c) on cone parts
            t_lin = w_lin * (rc_lin / lam_lin)
            t_soc = sc.apply(_arrow_solve(lam_soc, rc_soc)) if sc is not None else np.zeros((0, 3))
            t = np.zeros(n)
            t[st.lin] = t_lin
            if st.soc.size:
                t[st.soc] = t_soc
            x2, y2, _ = kkt.solve((1 - sigma) * r_d - t, (1 - sigma) * r_p)
            dtau = (((1 - sigma) * r_g + r_tk / it.tau - b_s @ y2 + c_s @ x2)
                    / (b_s @ y1 - c_s @ x1 + it.kappa / it.tau))
            dx = x2 + dtau * x1
            dy = y2 + dtau * y1
            ds = np.zeros(n)
            ds[st.lin] = w_lin * (rc_lin / lam_lin - w_lin * dx[st.lin])
            if st.soc.size:
                ds[st.soc] = sc.apply(_arrow_solve(lam_soc, rc_soc) - sc.apply(dx[st.soc]))
            dkappa = (r_tk - it.kappa * dtau) / it.tau
            # the linearized dual equation keeps the dual residual exact, but
            # near the boundary it can disagree with complementarity enough to
            # cut the step; keep it only when the step survives
            ds_eq = (1 - sigma) * r_d + c_s * dtau - A.T @ dy
            ds_eq[st.free] = 0.0
            if max_step(dx, ds_eq, dtau, dkappa) >= _DS_EQ_KEEP * max_step(dx, ds, dtau, dkappa):
                ds = ds_eq
            return dx, dy, ds, dtau, dkappa

        def max_step(dx, ds, dtau, dkappa):
            steps = [np.inf]
            for u, d in ((it.x, dx), (it.s, ds)):
                dl = d[st.lin]
                neg = dl < 0
                if np.any(neg):
                    steps.append(np.min(-u[st.lin][neg] / dl[neg]))
                if st.soc.size:
                    steps.append(_soc_max_step(u[st.soc], d[st.soc]))
            if dtau < 0:
                steps.append(-it.tau / dtau)
            if dkappa < 0:
                steps.append(-it.kappa / dkappa)
            return min(steps)

        # predictor
        lamlam_soc = _jordan(lam_soc, lam_soc) if st.soc.size else np.zeros((0, 3))
        aff = direction(0.0, -lam_lin ** 2, -lamlam_soc, -it.tau * it.kappa)
        a_aff = min(1.0, max_step(*[aff[0], aff[2], aff[3], aff[4]]))
        sigma = (1.0 - a_aff) ** 3

        # corrector (second-order term in the scaled space)
        dxa, _, dsa, dtaua, dkappaa = aff
        corr_lin = (dsa[st.lin] / w_lin) * (w_lin * dxa[st.lin])
        rc_lin = sigma * mu - lam_lin ** 2 - corr_lin
        if st.soc.size:
            e = np.zeros_like(lam_soc)
            e[:, 0] = 1.0
            corr_soc = _jordan(sc.apply(dsa[st.soc], inverse=True), sc.apply(dxa[st.soc]))
            rc_soc = sigma * mu * e - lamlam_soc - corr_soc
        else:
            rc_soc = np.zeros((0, 3))
        r_tk = sigma * mu - it.tau * it.kappa - dtaua * dkappaa
        dx, dy, ds, dtau, dkappa = direction(sigma, rc_lin, rc_soc, r_tk)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(ds)) and np.isfinite(dtau)):
            stats = _failure(k, best, "non-finite search direction")
            break
        step = min(1.0, settings.step_fraction * max_step(dx, ds, dtau, dkappa))
        # the ratio test is exact only up to rounding; back off until the
        # candidate is strictly interior
        while step >= 1e-12:
            cand = _Iterate(it.x + step * dx, it.y + step * dy, it.s + step * ds,
                            it.tau + step * dtau, it.kappa + step * dkappa)
            if st.free.size:
                cand.s[st.free] = 0.0
            if _interior(cand, st):
                break
            step *= 0.5
        last_step = step
        if step < 1e-12:
            stats = _failure(k + 1, best, "step length collapsed")
            break
        it = cand

    if converged is not None:
        _, xr, yr, sr, stats = converged
    elif stats is None:
        merit, it_b, (pres, dres, gap, pobj) = best
        stats = SolveStats(settings.max_iterations, pres, dres, gap, ITERATION_LIMIT, pobj,
                           it_b.tau, it_b.kappa, message="best iterate returned")
        xr, yr, sr = it_b.x, it_b.y, it_b.s
    elif stats.status == NUMERICAL_FAILURE:
        it_b = best[1]
        xr, yr, sr = it_b.x, it_b.y, it_b.s
    stats.solve_seconds = time.perf_counter() - t_start
    return Solution(xr, yr, sr, stats)


def _failure(k, best, message) -> SolveStats:
    _, it_b, (pres, dres, gap, pobj) = best
    return SolveStats(k, pres, dres, gap, NUMERICAL_FAILURE, pobj, it_b.tau, it_b.kappa,
                      message=message)

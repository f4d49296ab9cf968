"""Standard-form conic transcription of the relaxed train-control model.

The program is ``minimize c'x  s.t.  A x = b,  x in K`` where ``K`` is a
product of one free block, one nonnegative orthant and 3-dimensional
second-order cones ``{(x0, x1, x2) : sqrt(x0^2 + x1^2) <= x2}``.

Variable order: the five free families ``v, alpha, beta, F, E`` (N each),
then seven slack families (N each), then the cone coordinates of every
``alpha`` block followed by every ``beta`` block. Row order: the schedule
row, the N work-balance rows, the seven slack-coupling families, the cone
tie rows, and finally the terminal pins when the journey has a station stop.

The resistance term ``A + B v + C beta`` is substituted straight into the
work-balance rows, so it never appears as a variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import structural_rank

from eetc.errors import AssemblyError, DimensionError
from eetc.model import JourneySpec, TrainParams, Trajectory

FREE, NONNEG, SOC3 = "free", "nonneg", "soc3"

CORE_FAMILIES = ("v", "alpha", "beta", "force", "energy")
SLACK_FAMILIES = (
    "speed_limit",
    "force_upper",
    "force_lower",
    "power_traction",
    "power_braking",
    "energy_traction",
    "energy_braking",
)


@dataclass(frozen=True)
class Cone:
    kind: str
    start: int
    width: int

    @property
    def stop(self) -> int:
        return self.start + self.width


@dataclass(frozen=True)
class VariableLayout:
    """Index ranges of every variable family in the decision vector."""

    segment_count: int
    ranges: dict[str, range]
    alpha_cones: tuple[int, ...]
    beta_cones: tuple[int, ...]
    size: int

    def index(self, family: str, segment: int) -> int:
        return self.ranges[family][segment]

    def __post_init__(self):
        seen = np.zeros(self.size, dtype=int)
        for r in self.ranges.values():
            seen[r.start:r.stop] += 1
        if not np.all(seen == 1):
            raise AssemblyError("layout", "variable ranges must tile the vector exactly once")


@dataclass(frozen=True)
class ConicProgram:
    """Immutable standard-form program with its layout and row bookkeeping."""

    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    b: np.ndarray
    cones: tuple[Cone, ...]
    layout: VariableLayout | None = None
    row_families: dict[str, slice] = field(default_factory=dict)
    column_scale: np.ndarray | None = None
    """Typical magnitude of each variable; seeds the solver's equilibration."""

    @property
    def shape(self) -> tuple[int, int]:
        return self.b.shape[0], self.c.shape[0]

    @property
    def A(self) -> sp.csc_matrix:
        m, n = self.shape
        return sp.csc_matrix((self.vals, (self.rows, self.cols)), shape=(m, n))

    def cone_count(self, kind: str) -> int:
        return sum(1 for cone in self.cones if cone.kind == kind)

    def cone_width(self, kind: str) -> int:
        return sum(cone.width for cone in self.cones if cone.kind == kind)


@dataclass(frozen=True)
class ConeRows:
    """Affine rows ``x[cone_index[k]] - sum(coef * x[var]) = rhs[k]`` tying a cone to the model."""

    cone_index: tuple[int, int, int]
    terms: tuple[tuple[tuple[int, float], ...], ...]
    rhs: tuple[float, float, float]


def alpha_cone_point(alpha, v):
    """Cone coordinates ``(2, alpha - v, alpha + v)`` of the time relaxation."""
    alpha, v = np.asarray(alpha, float), np.asarray(v, float)
    return np.stack([np.full(np.broadcast(alpha, v).shape, 2.0), alpha - v, alpha + v], axis=-1)


def beta_cone_point(beta, v):
    """Cone coordinates ``(2 v, beta - 1, beta + 1)`` of the speed-squared relaxation."""
    beta, v = np.asarray(beta, float), np.asarray(v, float)
    return np.stack([2.0 * v + 0.0 * beta, beta - 1.0, beta + 1.0], axis=-1)


def soc3_margin(u):
    """``u2 - sqrt(u0^2 + u1^2)``; non-negative exactly on the cone."""
    u = np.asarray(u, float)
    return u[..., 2] - np.hypot(u[..., 0], u[..., 1])


def soc_alpha_block(layout: VariableLayout, i: int) -> ConeRows:
    """Rows forcing the ``i``-th alpha cone to equal ``(2, alpha_i - v_i, alpha_i + v_i)``."""
    k0 = layout.alpha_cones[i]
    va, al = layout.index("v", i), layout.index("alpha", i)
    return ConeRows(
        (k0, k0 + 1, k0 + 2),
        ((), ((al, 1.0), (va, -1.0)), ((al, 1.0), (va, 1.0))),
        (2.0, 0.0, 0.0),
    )


def soc_beta_block(layout: VariableLayout, i: int) -> ConeRows:
    """Rows forcing the ``i``-th beta cone to equal ``(2 v_i, beta_i - 1, beta_i + 1)``."""
    k0 = layout.beta_cones[i]
    va, be = layout.index("v", i), layout.index("beta", i)
    return ConeRows(
        (k0, k0 + 1, k0 + 2),
        (((va, 2.0),), ((be, 1.0),), ((be, 1.0),)),
        (0.0, -1.0, 1.0),
    )


def _validate(spec: JourneySpec, params: TrainParams) -> None:
    n = spec.segment_count
    if spec.altitude_delta.shape != (n,) or spec.speed_limit.shape != (n,):
        raise AssemblyError("geometry", "per-segment arrays do not match segment_count")
    if not np.all(np.isfinite(spec.speed_limit)) or np.any(spec.speed_limit <= 0):
        raise AssemblyError("speed_limit", "every speed limit must be positive and finite")
    if not np.all(np.isfinite(spec.altitude_delta)):
        raise AssemblyError("work_balance", "altitude steps must be finite")
    if not spec.journey_time > 0:
        raise AssemblyError("schedule", "journey time must be positive")
    if not params.mass > 0 or not params.gravity > 0:
        raise AssemblyError("work_balance", "mass and gravity must be positive")
    if not params.f_max > 0:
        raise AssemblyError("force_upper", "f_max must be positive")
    if not (params.p_traction_max > 0 and params.p_brake_max > 0):
        raise AssemblyError("power_traction", "power limits must be positive")
    if not (0 < params.eta_t <= 1 and 0 < params.eta_b <= 1):
        raise AssemblyError("energy_traction", "efficiencies must lie in (0, 1]")
    vt = spec.terminal_speed
    if vt is not None and not 0 < vt <= spec.speed_limit[-1]:
        raise AssemblyError("terminal", "terminal speed must lie in (0, final speed limit]")


def build_layout(spec: JourneySpec) -> VariableLayout:
    n = spec.segment_count
    ranges: dict[str, range] = {}
    pos = 0
    for name in CORE_FAMILIES + SLACK_FAMILIES:
        ranges[name] = range(pos, pos + n)
        pos += n
    n_beta = n - 1 if spec.terminal_speed is not None else n
    ranges["alpha_cone"] = range(pos, pos + 3 * n)
    alpha_cones = tuple(pos + 3 * k for k in range(n))
    pos += 3 * n
    ranges["beta_cone"] = range(pos, pos + 3 * n_beta)
    beta_cones = tuple(pos + 3 * k for k in range(n_beta))
    pos += 3 * n_beta
    return VariableLayout(n, ranges, alpha_cones, beta_cones, pos)


class _Rows:
    def __init__(self):
        self.r: list[int] = []
        self.c: list[int] = []
        self.v: list[float] = []
        self.b: list[float] = []

    def add(self, terms, rhs: float) -> None:
        row = len(self.b)
        for col, val in terms:
            if val != 0.0:
                self.r.append(row)
                self.c.append(col)
                self.v.append(float(val))
        self.b.append(float(rhs))

    def add_cone(self, block: ConeRows) -> None:
        for idx, terms, rhs in zip(block.cone_index, block.terms, block.rhs):
            self.add(((idx, 1.0),) + tuple((col, -coef) for col, coef in terms), rhs)

    def __len__(self):
        return len(self.b)


def assemble(spec: JourneySpec, params: TrainParams) -> ConicProgram:
    """Transcribe ``(spec, params)`` into a :class:`ConicProgram`."""
    _validate(spec, params)
    n = spec.segment_count
    lay = build_layout(spec)
    ix = lay.index
    dd, m = spec.segment_length, params.mass
    pa, pb, pc = params.davis_a, params.davis_b, params.davis_c
    rows = _Rows()
    fam: dict[str, slice] = {}

    def family(name, start):
        fam[name] = slice(start, len(rows))

    start = len(rows)
    rows.add([(ix("alpha", i), dd) for i in range(n)], spec.journey_time)
    family("schedule", start)

    # F dd - B dd v - (M/2 + C dd) beta + (M/2) beta_prev = A dd + M g dH
    start = len(rows)
    for i in range(n):
        terms = [(ix("force", i), dd), (ix("v", i), -pb * dd), (ix("beta", i), -(0.5 * m + pc * dd))]
        if i > 0:
            terms.append((ix("beta", i - 1), 0.5 * m))
        rows.add(terms, pa * dd + m * params.gravity * spec.altitude_delta[i])
    family("work_balance", start)

    coupling = {
        "speed_limit": lambda i: ([(ix("beta", i), 1.0)], spec.speed_limit[i] ** 2),
        "force_upper": lambda i: ([(ix("force", i), 1.0)], params.f_max),
        "force_lower": lambda i: ([(ix("force", i), -1.0)], params.f_max),
        "power_traction": lambda i: ([(ix("force", i), 1.0), (ix("alpha", i), -params.p_traction_max)], 0.0),
        "power_braking": lambda i: ([(ix("force", i), -1.0), (ix("alpha", i), -params.p_brake_max)], 0.0),
        "energy_traction": lambda i: ([(ix("force", i), dd / params.eta_t), (ix("energy", i), -1.0)], 0.0),
        "energy_braking": lambda i: ([(ix("force", i), dd * params.eta_b), (ix("energy", i), -1.0)], 0.0),
    }
    for name in SLACK_FAMILIES:
        start = len(rows)
        for i in range(n):
            terms, rhs = coupling[name](i)
            rows.add(terms + [(ix(name, i), 1.0)], rhs)
        family(name, start)

    start = len(rows)
    for i in range(n):
        rows.add_cone(soc_alpha_block(lay, i))
    family("alpha_cone", start)
    start = len(rows)
    for i in range(len(lay.beta_cones)):
        rows.add_cone(soc_beta_block(lay, i))
    family("beta_cone", start)

    if spec.terminal_speed is not None:
        vt = spec.terminal_speed
        start = len(rows)
        rows.add([(ix("v", n - 1), 1.0)], vt)
        rows.add([(ix("beta", n - 1), 1.0)], vt * vt)
        family("terminal", start)

    c = np.zeros(lay.size)
    c[lay.ranges["energy"].start:lay.ranges["energy"].stop] = 1.0

    n_free = 5 * n
    cones = [Cone(FREE, 0, n_free), Cone(NONNEG, n_free, 7 * n)]
    cones += [Cone(SOC3, k, 3) for k in lay.alpha_cones + lay.beta_cones]

    prog = ConicProgram(
        c=c,
        column_scale=_typical_magnitudes(spec, params, lay),
        rows=np.array(rows.r, dtype=np.int64),
        cols=np.array(rows.c, dtype=np.int64),
        vals=np.array(rows.v),
        b=np.array(rows.b),
        cones=tuple(cones),
        layout=lay,
        row_families=fam,
    )
    _check_structure(prog)
    return prog


def minimum_time_program(spec: JourneySpec, params: TrainParams) -> ConicProgram:
    """The same constraints without the schedule row, minimizing running time."""
    prog = assemble(spec, params)
    lay = prog.layout
    keep = prog.rows != 0
    c = np.zeros(lay.size)
    alpha = lay.ranges["alpha"]
    c[alpha.start:alpha.stop] = spec.segment_length
    families = {name: slice(sl.start - 1, sl.stop - 1)
                for name, sl in prog.row_families.items() if name != "schedule"}
    out = ConicProgram(c=c, rows=prog.rows[keep] - 1, cols=prog.cols[keep], vals=prog.vals[keep],
                       b=prog.b[1:], cones=prog.cones, layout=lay, row_families=families,
                       column_scale=prog.column_scale)
    _check_structure(out)
    return out


def _typical_magnitudes(spec: JourneySpec, params: TrainParams, lay: VariableLayout) -> np.ndarray:
    vmax = float(np.max(spec.speed_limit))
    work = params.f_max * spec.segment_length / params.eta_t
    magnitude = {
        "v": vmax, "alpha": 1.0 / vmax, "beta": vmax ** 2, "force": params.f_max, "energy": work,
        "speed_limit": vmax ** 2, "force_upper": params.f_max, "force_lower": params.f_max,
        "power_traction": params.f_max, "power_braking": params.f_max,
        "energy_traction": work, "energy_braking": work,
        "alpha_cone": vmax, "beta_cone": vmax ** 2,
    }
    out = np.ones(lay.size)
    for name, r in lay.ranges.items():
        out[r.start:r.stop] = magnitude[name]
    return out


def _check_structure(prog: ConicProgram) -> None:
    covered = np.zeros(prog.shape[1], dtype=int)
    for cone in prog.cones:
        covered[cone.start:cone.stop] += 1
    if not np.all(covered == 1):
        raise AssemblyError("cones", "cone partition must cover every variable exactly once")
    A = prog.A.tocsr()
    if np.any(np.diff(A.indptr) == 0):
        raise AssemblyError("rows", "empty equality row")
    if structural_rank(A) < A.shape[0]:
        raise AssemblyError("rows", "equality system is structurally rank deficient")


def census(segment_count: int, pinned: bool = False) -> dict[str, int]:
    """Closed-form row, variable and cone counts of :func:`assemble`."""
    n = segment_count
    n_beta = n - 1 if pinned else n
    return {
        "equality_rows": n + 1,
        "inequality_rows": 7 * n,
        "cone_tie_rows": 3 * (n + n_beta),
        "pin_rows": 2 if pinned else 0,
        "rows": n + 1 + 7 * n + 3 * (n + n_beta) + (2 if pinned else 0),
        "variables": 5 * n + 7 * n + 3 * (n + n_beta),
        "soc3": n + n_beta,
    }


def extract_solution(x, layout: VariableLayout) -> Trajectory:
    """Read the trajectory families straight out of a solver vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.size,):
        raise DimensionError(f"solver vector has shape {x.shape}, layout expects ({layout.size},)")
    part = {name: x[layout.ranges[name].start:layout.ranges[name].stop] for name in CORE_FAMILIES}
    return Trajectory(part["v"], part["alpha"], part["beta"], part["force"], part["energy"])


def embed_trajectory(traj: Trajectory, spec: JourneySpec, params: TrainParams,
                     layout: VariableLayout) -> np.ndarray:
    """Full decision vector (slacks and cone coordinates included) for a trajectory."""
    n = layout.segment_count
    if traj.segment_count != n:
        raise DimensionError("trajectory length does not match layout")
    x = np.zeros(layout.size)
    dd = spec.segment_length
    values = {
        "v": traj.v, "alpha": traj.alpha, "beta": traj.beta,
        "force": traj.force, "energy": traj.energy,
        "speed_limit": spec.speed_limit ** 2 - traj.beta,
        "force_upper": params.f_max - traj.force,
        "force_lower": params.f_max + traj.force,
        "power_traction": params.p_traction_max * traj.alpha - traj.force,
        "power_braking": params.p_brake_max * traj.alpha + traj.force,
        "energy_traction": traj.energy - traj.force * dd / params.eta_t,
        "energy_braking": traj.energy - traj.force * dd * params.eta_b,
    }
    for name, val in values.items():
        r = layout.ranges[name]
        x[r.start:r.stop] = val
    for i, k in enumerate(layout.alpha_cones):
        x[k:k + 3] = alpha_cone_point(traj.alpha[i], traj.v[i])
    for i, k in enumerate(layout.beta_cones):
        x[k:k + 3] = beta_cone_point(traj.beta[i], traj.v[i])
    return x


def write_program(prog: ConicProgram, path) -> None:
    """Plain-text sparse export.

    Layout::

        eetc-conic 1
        dims <variables> <rows> <nonzeros>
        cones <count>
        <kind> <start> <width>      (one line per cone)
        c <count>
        <index> <value>             (nonzero objective entries)
        b <count>
        <index> <value>             (nonzero right-hand-side entries)
        A <count>
        <row> <col> <value>         (one triplet per line, row-major order)
        scale <count>               (optional: typical variable magnitudes)
        <value>                     (one per variable)
    """
    m, n = prog.shape
    A = prog.A.tocsr()
    A.sort_indices()
    lines = ["eetc-conic 1", f"dims {n} {m} {A.nnz}", f"cones {len(prog.cones)}"]
    lines += [f"{cone.kind} {cone.start} {cone.width}" for cone in prog.cones]
    for label, vec in (("c", prog.c), ("b", prog.b)):
        nz = np.flatnonzero(vec)
        lines.append(f"{label} {nz.size}")
        lines += [f"{k} {vec[k]:.17g}" for k in nz]
    lines.append(f"A {A.nnz}")
    coo = A.tocoo()
    lines += [f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row, coo.col, coo.data)]
    if prog.column_scale is not None:
        lines.append(f"scale {n}")
        lines += [f"{v:.17g}" for v in prog.column_scale]
    Path(path).write_text("\n".join(lines) + "\n")


def read_program(path) -> ConicProgram:
    """Inverse of :func:`write_program` (the layout is not stored)."""
    tokens = iter(Path(path).read_text().split("\n"))

    def header(expected):
        parts = next(tokens).split()
        if parts[0] != expected:
            raise ValueError(f"expected '{expected}' section, found '{parts[0]}'")
        return [int(p) for p in parts[1:]]

    header("eetc-conic")
    n, m, _ = header("dims")
    (n_cones,) = header("cones")
    cones = []
    for _ in range(n_cones):
        kind, start, width = next(tokens).split()
        cones.append(Cone(kind, int(start), int(width)))
    vecs = {}
    for label, size in (("c", n), ("b", m)):
        (count,) = header(label)
        vec = np.zeros(size)
        for _ in range(count):
            k, val = next(tokens).split()
            vec[int(k)] = float(val)
        vecs[label] = vec
    (nnz,) = header("A")
    trip = np.array([next(tokens).split() for _ in range(nnz)], dtype=float).reshape(-1, 3)
    scale = None
    rest = [line for line in tokens if line.strip()]
    if rest:
        parts = rest[0].split()
        if parts[0] != "scale" or int(parts[1]) != n or len(rest) != n + 1:
            raise ValueError("malformed trailing 'scale' section")
        scale = np.array([float(v) for v in rest[1:]])
    return ConicProgram(vecs["c"], trip[:, 0].astype(np.int64), trip[:, 1].astype(np.int64),
                        trip[:, 2], vecs["b"], tuple(cones), column_scale=scale)

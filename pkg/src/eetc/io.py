"""File formats and unit conversion at the package boundary.

Every non-SI unit accepted from users (tonnes, kN, kW, km/h, per-km/h Davis
coefficients) is converted here and nowhere else.

Key-value files hold one ``key = value`` pair per line; ``#`` starts a
comment. Units are part of the key name.

Parameter keys::

    mass_t  davis_a_kn  davis_b_kn_per_kmh  davis_c_kn_per_kmh2
    f_max_kn  p_t_max_kw  p_b_max_kw  eta_t  eta_b  [gravity_mps2]

Journey keys::

    total_distance_m  segment_count  journey_time_s  [terminal_speed_kmh]
    altitude_file  limits_file      (paths relative to the journey file)

Track CSVs: ``position_m,altitude_m`` (strictly increasing positions from 0,
linear interpolation between rows) and ``from_m,limit_kmh`` (strictly
increasing starts beginning at 0; each limit holds until the next start).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from eetc.errors import TrackParseError, ValidationError
from eetc.model import DEFAULT_GRAVITY, JourneySpec, TrackProfile, TrainParams, Trajectory

TONNE = 1000.0
KILO = 1000.0
KMH = 1.0 / 3.6

PARAM_KEYS = ("mass_t", "davis_a_kn", "davis_b_kn_per_kmh", "davis_c_kn_per_kmh2",
              "f_max_kn", "p_t_max_kw", "p_b_max_kw", "eta_t", "eta_b")
JOURNEY_KEYS = ("total_distance_m", "segment_count", "journey_time_s")

SIG_DIGITS = 12

TRAJECTORY_COLUMNS = ("index", "position_m", "v_mps", "alpha_spm", "beta_m2ps2", "force_n",
                      "energy_j", "cum_time_s", "cum_energy_j")


def fmt(x: float) -> str:
    """Fixed 12-significant-digit rendering used by every writer."""
    return f"{float(x):.{SIG_DIGITS}g}"


def quantize(arr) -> np.ndarray:
    """Round values exactly as :func:`fmt` would when written and re-read."""
    return np.array([float(fmt(x)) for x in np.ravel(arr)]).reshape(np.shape(arr))


def read_key_values(path) -> dict[str, str]:
    path = Path(path)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TrackParseError(str(path), lineno, f"expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise TrackParseError(str(path), lineno, f"duplicate key '{key}'")
        out[key] = value
    return out


def _number(kv: dict, key: str, path) -> float:
    try:
        value = float(kv[key])
    except KeyError:
        raise TrackParseError(str(path), None, f"missing key '{key}'") from None
    except ValueError:
        raise TrackParseError(str(path), None, f"key '{key}' is not a number: {kv[key]!r}") from None
    if not math.isfinite(value):
        raise TrackParseError(str(path), None, f"key '{key}' must be finite")
    return value


def params_from_table_units(kv: dict[str, float]) -> TrainParams:
    """Convert table-style units to SI :class:`TrainParams`."""
    return TrainParams(
        mass=kv["mass_t"] * TONNE,
        davis_a=kv["davis_a_kn"] * KILO,
        davis_b=kv["davis_b_kn_per_kmh"] * KILO * 3.6,
        davis_c=kv["davis_c_kn_per_kmh2"] * KILO * 3.6 ** 2,
        f_max=kv["f_max_kn"] * KILO,
        p_traction_max=kv["p_t_max_kw"] * KILO,
        p_brake_max=kv["p_b_max_kw"] * KILO,
        eta_t=kv["eta_t"],
        eta_b=kv["eta_b"],
        gravity=kv.get("gravity_mps2", DEFAULT_GRAVITY),
    )


def load_params(path) -> TrainParams:
    """Read a parameter key-value file and return SI :class:`TrainParams`."""
    kv = read_key_values(path)
    values = {key: _number(kv, key, path) for key in PARAM_KEYS}
    if "gravity_mps2" in kv:
        values["gravity_mps2"] = _number(kv, "gravity_mps2", path)
    unknown = set(kv) - set(PARAM_KEYS) - {"gravity_mps2"}
    if unknown:
        raise TrackParseError(str(path), None, f"unknown keys: {', '.join(sorted(unknown))}")
    try:
        return params_from_table_units(values)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _read_csv(path, columns: tuple[str, str]) -> tuple[np.ndarray, np.ndarray, list[int]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TrackParseError(str(path), 1, "empty file") from None
        if tuple(header[:2]) != columns:
            raise TrackParseError(str(path), 1, f"expected header {','.join(columns)}")
        xs, ys, lines = [], [], []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                xs.append(float(row[0]))
                ys.append(float(row[1]))
            except (ValueError, IndexError):
                raise TrackParseError(str(path), lineno, f"malformed row {row}") from None
            lines.append(lineno)
    if not xs:
        raise TrackParseError(str(path), None, "no data rows")
    return np.array(xs), np.array(ys), lines


def load_track(altitude_path, limits_path) -> TrackProfile:
    """Read the altitude and speed-limit CSVs into a :class:`TrackProfile` (SI)."""
    pos, alt, lines = _read_csv(altitude_path, ("position_m", "altitude_m"))
    if pos[0] != 0.0:
        raise TrackParseError(str(altitude_path), lines[0], "altitude profile must start at 0 m")
    for k in range(1, pos.size):
        if not pos[k] > pos[k - 1]:
            raise TrackParseError(str(altitude_path), lines[k], "positions must strictly increase")
    if pos.size < 2:
        raise TrackParseError(str(altitude_path), None, "need at least two altitude points")
    starts, limits_kmh, lines = _read_csv(limits_path, ("from_m", "limit_kmh"))
    if starts[0] != 0.0:
        raise TrackParseError(str(limits_path), lines[0], "speed limits must cover the line from 0 m")
    for k in range(1, starts.size):
        if not starts[k] > starts[k - 1]:
            raise TrackParseError(str(limits_path), lines[k], "limit spans overlap (starts must strictly increase)")
    for k, lim in enumerate(limits_kmh):
        if not lim > 0:
            raise TrackParseError(str(limits_path), lines[k], "speed limits must be positive")
    if starts[-1] >= pos[-1]:
        raise TrackParseError(str(limits_path), lines[-1], "limit span starts beyond the end of the track")
    return TrackProfile(pos, alt, starts, limits_kmh * KMH)


@dataclass(frozen=True)
class JourneyFile:
    total_distance: float
    segment_count: int
    journey_time: float
    terminal_speed: float | None
    altitude_file: Path
    limits_file: Path


def load_journey(path) -> JourneyFile:
    path = Path(path)
    kv = read_key_values(path)
    values = {key: _number(kv, key, path) for key in JOURNEY_KEYS}
    n = values["segment_count"]
    if n != int(n) or n < 1:
        raise TrackParseError(str(path), None, "segment_count must be a positive integer")
    terminal = None
    if "terminal_speed_kmh" in kv:
        terminal = _number(kv, "terminal_speed_kmh", path) * KMH
    for key in ("altitude_file", "limits_file"):
        if key not in kv:
            raise TrackParseError(str(path), None, f"missing key '{key}'")
    base = path.parent
    return JourneyFile(values["total_distance_m"], int(n), values["journey_time_s"], terminal,
                       base / kv["altitude_file"], base / kv["limits_file"])


def load_case(journey_path, segment_count: int | None = None, journey_time: float | None = None,
              terminal_speed: float | None | str = "file") -> JourneySpec:
    """Journey file plus its track CSVs, discretized; CLI overrides win."""
    jf = load_journey(journey_path)
    track = load_track(jf.altitude_file, jf.limits_file)
    vt = jf.terminal_speed if terminal_speed == "file" else terminal_speed
    return JourneySpec.from_track(track, jf.total_distance, segment_count or jf.segment_count,
                                  journey_time or jf.journey_time, vt)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("eetc") / "data" / name))


def default_params() -> TrainParams:
    """Reference traction parameters shipped with the package."""
    return load_params(bundled_path("train_params.txt"))


def default_case(**overrides) -> JourneySpec:
    """The bundled stand-in urban-rail scenario (see ``data/default_journey.txt``)."""
    return load_case(bundled_path("default_journey.txt"), **overrides)


# ---------------------------------------------------------------------------
# Writers / readers for run artifacts
# ---------------------------------------------------------------------------

def write_trajectory(path, traj: Trajectory, spec: JourneySpec) -> None:
    pos = spec.positions
    cum_t = traj.cumulative_time(spec)
    cum_e = traj.cumulative_energy()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for k in range(traj.segment_count):
            w.writerow([k + 1] + [fmt(val) for val in (pos[k], traj.v[k], traj.alpha[k], traj.beta[k],
                                                         traj.force[k], traj.energy[k], cum_t[k], cum_e[k])])


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_COLUMNS[:7]) - set(reader.fieldnames or ())
        if missing:
            raise TrackParseError(str(path), 1, f"missing columns: {', '.join(sorted(missing))}")
        rows = list(reader)
    if not rows:
        raise TrackParseError(str(path), None, "no trajectory rows")
    col = lambda name: np.array([float(r[name]) for r in rows])
    return Trajectory(col("v_mps"), col("alpha_spm"), col("beta_m2ps2"), col("force_n"), col("energy_j"))


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return float(fmt(v)) if math.isfinite(v) else None
    return value


def record_line(record: dict) -> str:
    """One deterministic JSON line (sorted keys, 12 significant digits)."""
    return json.dumps(_jsonable(record), sort_keys=True)


def write_records(path, records) -> None:
    Path(path).write_text("".join(record_line(r) + "\n" for r in records))


def write_columns(path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*(columns[n] for n in names)):
            w.writerow([fmt(v) for v in row])

import json

import numpy as np
import pytest

from eetc.errors import TrackParseError, ValidationError
from eetc.io import (bundled_path, fmt, load_case, load_params, load_track, quantize, read_trajectory,
                     record_line, write_trajectory)
from eetc.model import JourneySpec, Trajectory


def _write(path, text):
    path.write_text(text)
    return path


def test_flat_track(tmp_path):
    alt = _write(tmp_path / "a.csv", "position_m,altitude_m\n0,5\n1000,5\n")
    lim = _write(tmp_path / "l.csv", "from_m,limit_kmh\n0,72\n")
    track = load_track(alt, lim)
    spec = JourneySpec.from_track(track, 1000.0, 10, 100.0)
    assert np.all(spec.altitude_delta == 0)
    np.testing.assert_allclose(spec.speed_limit, 20.0)


@pytest.mark.parametrize("alt,lim,line", [
    ("position_m,altitude_m\n0,0\n10,0\n10,1\n", "from_m,limit_kmh\n0,50\n", 4),
    ("position_m,altitude_m\n0,0\n100,0\n", "from_m,limit_kmh\n0,50\n40,60\n30,70\n", 4),
    ("position_m,altitude_m\n0,0\n100,0\n", "from_m,limit_kmh\n0,50\n50,-5\n", 3),
    ("position_m,altitude_m\n0,0\n100,x\n", "from_m,limit_kmh\n0,50\n", 3),
])
def test_track_errors_carry_line_numbers(tmp_path, alt, lim, line):
    a = _write(tmp_path / "a.csv", alt)
    b = _write(tmp_path / "l.csv", lim)
    with pytest.raises(TrackParseError) as info:
        load_track(a, b)
    assert info.value.line == line


def test_limits_must_start_at_zero(tmp_path):
    a = _write(tmp_path / "a.csv", "position_m,altitude_m\n0,0\n100,0\n")
    b = _write(tmp_path / "l.csv", "from_m,limit_kmh\n10,50\n")
    with pytest.raises(TrackParseError, match="from 0 m"):
        load_track(a, b)


def test_params_file_errors(tmp_path):
    good = ("mass_t = 144\nf_max_kn = 230.81\np_t_max_kw = 2520\np_b_max_kw = 2520\n"
            "eta_t = 0.9\neta_b = 0.6\ndavis_a_kn = 3.0016\ndavis_b_kn_per_kmh = 2.016e-2\n"
            "davis_c_kn_per_kmh2 = 6.9692e-4\n")
    p = load_params(_write(tmp_path / "p.txt", good))
    assert p.davis_c == pytest.approx(6.9692e-4 * 1000 * 12.96)
    with pytest.raises(TrackParseError, match="missing key 'mass_t'"):
        load_params(_write(tmp_path / "q.txt", good.replace("mass_t = 144\n", "")))
    with pytest.raises(ValidationError):
        load_params(_write(tmp_path / "r.txt", good.replace("eta_b = 0.6", "eta_b = 0")))
    with pytest.raises(TrackParseError, match="duplicate"):
        load_params(_write(tmp_path / "s.txt", good + "eta_b = 0.5\n"))


def test_case_overrides():
    spec = load_case(bundled_path("default_journey.txt"),
                     segment_count=40, journey_time=300.0, terminal_speed=None)
    assert spec.segment_count == 40 and spec.journey_time == 300.0 and spec.terminal_speed is None


def test_fmt_and_quantize_agree():
    x = np.array([1 / 3, 2.0 ** 0.5 * 1e7, -1e-9])
    np.testing.assert_array_equal(quantize(x), [float(fmt(v)) for v in x])
    np.testing.assert_array_equal(quantize(quantize(x)), quantize(x))


def test_trajectory_file_round_trip(tmp_path, params):
    spec = JourneySpec(900.0, 3, 100.0, np.zeros(3), np.full(3, 20.0))
    traj = Trajectory.from_speeds([7.0, 9.0, 11.0], spec, params)
    q = Trajectory(*(quantize(getattr(traj, k)) for k in ("v", "alpha", "beta", "force", "energy")))
    write_trajectory(tmp_path / "t.csv", q, spec)
    back = read_trajectory(tmp_path / "t.csv")
    for k in ("v", "alpha", "beta", "force", "energy"):
        np.testing.assert_array_equal(getattr(back, k), getattr(q, k))


def test_record_lines_are_deterministic():
    rec = {"b": np.float64(1 / 3), "a": [np.int64(2), True], "c": float("nan")}
    line = record_line(rec)
    assert line == record_line(dict(reversed(list(rec.items()))))
    assert json.loads(line) == {"a": [2, True], "b": 0.333333333333, "c": None}

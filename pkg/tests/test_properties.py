"""Randomized invariants, each exercised on at least 1000 generated cases."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from votdr.analysis import (
    AnalysisReport,
    DetectedEvent,
    Trace,
    fit_attenuation,
    to_log_trace,
)
from votdr.config import config_from_dict
from votdr.eventfile import decode_events, encode_events
from votdr.model import DetectorConfig, GateSchedule
from votdr.simulator import PhotonEventStream, apply_dead_time, apply_gate, simulate_process

CASES = settings(max_examples=1000, deadline=None)

_times = st.lists(st.floats(0, 1e4, allow_nan=False), max_size=200).map(sorted)


@st.composite
def _gates(draw, span=1e4):
    cuts = sorted(draw(st.lists(st.floats(0, span, allow_nan=False), max_size=8, unique=True)))
    pairs = [(a, b) for a, b in zip(cuts[::2], cuts[1::2]) if a < b]
    return GateSchedule(tuple(pairs))


@CASES
@given(_times, st.floats(0, 500, allow_nan=False), st.booleans())
def test_dead_time_minimum_gap(times, dead, paralyzable):
    kept = apply_dead_time(times, dead, paralyzable)
    assert np.all(np.diff(kept) >= dead)
    if not paralyzable and len(times):
        # nothing dropped that a non-paralyzable detector would have seen
        last = -math.inf
        expected = []
        for t in times:
            if t - last >= dead:
                expected.append(t)
                last = t
        np.testing.assert_array_equal(kept, expected)


@CASES
@given(_times, _gates())
def test_gating_exclusion(times, gate):
    kept = apply_gate(times, gate)
    for a, b in gate.intervals:
        assert not np.any((kept >= a) & (kept < b))
    outside = [t for t in times if not any(a <= t < b for a, b in gate.intervals)]
    np.testing.assert_array_equal(kept, outside)


@CASES
@given(
    st.integers(0, 2**32),
    st.integers(1, 40),
    st.integers(1, 7),
    st.floats(1e5, 5e6),
    st.integers(2, 4),
)
def test_seed_determinism_across_threads(seed, n_pulses, block, rate, workers):
    det = DetectorConfig(dark_rate=0.0, dead_time=50e-9, jitter_sigma=100e-12, polarization_visibility=0.0)
    gate = GateSchedule(((1e-6, 2e-6),))
    run = lambda w: simulate_process(  # noqa: E731
        lambda t: rate * (1 + np.cos(t * 1e6)) / 2, rate, 1e-5, det, n_pulses, seed, gate,
        workers=w, block_size=block,
    )
    a, b = run(1), run(workers)
    assert a == b
    assert a.is_sorted()
    # jitter acts after gating, so allow 10 sigma at each gate edge
    assert not np.any((a.timestamp >= 1_001_000) & (a.timestamp < 1_999_000))


@st.composite
def _streams(draw):
    n_pulses = draw(st.integers(1, 50))
    period_ps = draw(st.integers(1, 10**12))
    n = draw(st.integers(0, 60))
    pulse = np.sort(np.array(draw(st.lists(st.integers(0, n_pulses - 1), min_size=n, max_size=n)), dtype=np.int64))
    ts = np.array(draw(st.lists(st.integers(0, period_ps - 1), min_size=n, max_size=n)), dtype=np.int64)
    order = np.lexsort((ts, pulse))
    meta = draw(st.dictionaries(st.text(max_size=5), st.floats(allow_nan=False) | st.integers(-10, 10), max_size=3))
    return PhotonEventStream(pulse[order], ts[order], n_pulses, period_ps, draw(st.integers(0, 99)), GateSchedule(), meta)


@CASES
@given(_streams())
def test_event_file_round_trip(stream):
    data = encode_events(stream)
    back = decode_events(data)
    assert back == stream
    assert encode_events(back) == data


_num = st.floats(-1e3, 1e3, allow_nan=False)


@CASES
@given(
    _num, _num, _num,
    st.lists(st.tuples(st.floats(0, 1e5), st.sampled_from(["reflective", "lossy"]), _num), max_size=5),
)
def test_report_round_trip(slope, icpt, rms, events):
    rep = AnalysisReport(slope, icpt, rms, tuple(DetectedEvent(*e) for e in events), 1.0, 0.0, (0.0, 1.0), (2.0, 3.0))
    assert AnalysisReport.from_dict(rep.to_dict()) == rep


@CASES
@given(
    st.floats(10, 2e5),
    st.floats(0, 1),
    st.floats(-60, 10),
    st.floats(1, 5000),
    st.integers(0, 10**6),
    st.floats(0.01, 1),
    st.floats(0, 1e3),
)
def test_config_round_trip(length, alpha, power, pulse_ns, seed, eff, dead_ns):
    rep = min(1e9 / (2 * pulse_ns), 299792458 / (2 * 1.468 * length)) * 0.999
    d = {
        "fiber": {"segments": [{"length_m": length, "attenuation_db_per_km": alpha}]},
        "laser": {"peak_power_dbm": power, "pulse_width_ns": pulse_ns, "repetition_rate_hz": rep},
        "detector": {"efficiency": eff, "dead_time_ns": dead_ns},
        "acquisition": {"n_pulses": 1, "seed": seed},
    }
    cfg = config_from_dict(d)
    assert config_from_dict(cfg.to_dict()) == cfg


@CASES
@given(
    st.lists(st.floats(1e-6, 1.0), min_size=12, max_size=60),
    st.floats(1e-3, 1e3),
)
def test_log_trace_scale_invariance(prob, k):
    prob = np.array(prob)
    n = len(prob)
    one = Trace(1e-9, 1, np.zeros(n, np.int64), prob, prob, np.ones(n, bool))
    scaled = Trace(1e-9, 1, np.zeros(n, np.int64), prob * k, prob * k, np.ones(n, bool))
    np.testing.assert_allclose(to_log_trace(scaled).values, to_log_trace(one).values, atol=1e-9)


@CASES
@given(st.floats(-5, 5), st.floats(-50, 50), st.integers(10, 400), st.floats(1e-10, 1e-7))
def test_ols_exact_on_affine_input(slope, icpt, n, bw):
    z = 299792458 * (np.arange(n) + 0.5) * bw / (2 * 1.468)
    target = icpt + slope * z / 1e3
    prob = 10 ** (target / 5)
    tr = Trace(bw, 1, np.zeros(n, np.int64), prob, prob, np.ones(n, bool))
    lt = to_log_trace(tr, n0_strategy=1.0)
    s, c = fit_attenuation(lt, (0.0, z[-1] + 1))
    assert math.isclose(s, slope, abs_tol=1e-7 * (1 + 1e3 / max(z[-1], 1e-9)))
    assert math.isclose(c, icpt, abs_tol=1e-7)

import math

import numpy as np
import pytest

from votdr.analysis import (
    LOSSY,
    REFLECTIVE,
    AnalysisReport,
    DetectedEvent,
    Trace,
    analyze,
    bin_events,
    dead_time_correction,
    detect_events,
    dynamic_range,
    fit_attenuation,
    leading_edge_position,
    rms_noise_level,
    stitch_traces,
    to_log_trace,
)
from votdr.model import SPEED_OF_LIGHT, DomainError, GateSchedule
from votdr.simulator import PhotonEventStream

N_IDX = 1.468
BW = 10e-9


def _z(t):
    return SPEED_OF_LIGHT * t / (2 * N_IDX)


def _trace_from_prob(prob, n_pulses=10**6, bw=BW, origin=0.0, valid=None):
    prob = np.asarray(prob, float)
    counts = np.rint(prob * n_pulses).astype(np.int64)
    valid = np.ones(len(prob), bool) if valid is None else valid
    return Trace(bw, n_pulses, counts, counts / n_pulses, counts / n_pulses, valid, origin)


def _ideal(prob):
    """Noise-free trace: exact probabilities behind a huge exposure."""
    prob = np.asarray(prob, float)
    n = 10**12
    return Trace(BW, n, np.rint(prob * n).astype(np.int64), prob, prob, np.ones(len(prob), bool))


# --- published arithmetic ---------------------------------------------------


def test_dynamic_range_of_published_trace():
    assert dynamic_range(3.0, -39.19) == pytest.approx(42.19, abs=1e-12)


# --- binning ----------------------------------------------------------------


def test_bin_events_counts_and_gate():
    stream = PhotonEventStream(
        np.array([0, 0, 1, 2]),
        np.array([5, 1500, 1999, 9999]),
        n_pulses=4,
        period_ps=10_000,
        gate=GateSchedule(((4e-9, 5.5e-9),)),
    )
    tr = bin_events(stream, 1e-9)
    assert len(tr) == 10
    np.testing.assert_array_equal(tr.counts, [1, 2, 0, 0, 0, 0, 0, 0, 0, 1])
    np.testing.assert_allclose(tr.prob, tr.counts / 4)
    np.testing.assert_array_equal(tr.valid, [1, 1, 1, 1, 0, 0, 1, 1, 1, 1])


def test_bin_events_rejects_bad_width():
    stream = PhotonEventStream(np.zeros(0), np.zeros(0), 1, 1000)
    for bw in (0.0, 1e-14, 1e-6):
        with pytest.raises(DomainError):
            bin_events(stream, bw)


# --- dead-time correction ---------------------------------------------------


def test_correction_formula_on_known_history():
    counts = np.array([100, 200, 300, 400, 500])
    tr = Trace(BW, 1000, counts, counts / 1000, counts / 1000, np.ones(5, bool))
    out = dead_time_correction(tr, 25e-9)  # 2.5 bins
    p = counts / 1000
    dead = np.array([0, p[0], p[0] + p[1], p[1] + p[2] + 0.5 * p[0], p[2] + p[3] + 0.5 * p[1]])
    np.testing.assert_allclose(out.corrected, p / (1 - dead))
    assert out.valid.all()


def test_correction_zero_window_is_identity():
    tr = _trace_from_prob([0.1, 0.2])
    np.testing.assert_array_equal(dead_time_correction(tr, 0.0).corrected, tr.prob)
    with pytest.raises(DomainError):
        dead_time_correction(tr, -1.0)


def test_correction_flags_saturation():
    counts = np.array([600, 500, 10])
    tr = Trace(BW, 1000, counts, counts / 1000, counts / 1000, np.ones(3, bool))
    out = dead_time_correction(tr, 20e-9)
    np.testing.assert_array_equal(out.valid, [True, True, False])


def test_correction_leaves_empty_history_exact():
    counts = np.array([0, 0, 0, 7])
    tr = Trace(BW, 100, counts, counts / 100, counts / 100, np.ones(4, bool))
    assert dead_time_correction(tr, 30e-9).corrected[3] == 0.07


# --- log trace --------------------------------------------------------------


def test_log_trace_reference_and_sentinel():
    prob = np.array([0.01] * 10 + [0.001, 0.0])
    lt = to_log_trace(_ideal(prob))
    assert lt.n0 == pytest.approx(0.01)
    assert lt.values[0] == pytest.approx(0.0, abs=1e-12)
    assert lt.values[10] == pytest.approx(-5.0)
    assert lt.values[11] == -np.inf
    lt2 = to_log_trace(_ideal(prob), n0_strategy=0.001)
    assert lt2.values[10] == pytest.approx(0.0)
    with pytest.raises(DomainError):
        to_log_trace(_ideal(np.zeros(5)))
    with pytest.raises(ValueError):
        to_log_trace(_ideal(prob), n0_strategy="median")


def test_log_trace_distance_axis():
    lt = to_log_trace(_ideal(np.full(4, 0.1)), group_index=N_IDX)
    np.testing.assert_allclose(lt.distance, _z((np.arange(4) + 0.5) * BW))


# --- fitting and noise ------------------------------------------------------


def test_fit_exact_on_synthetic_decay():
    z = _z((np.arange(5000) + 0.5) * BW)
    prob = 0.01 * 10 ** (-0.2 * 0.195 * z / 1e3 / 1.0)  # 5log10 slope = -0.195 dB/km
    lt = to_log_trace(_ideal(prob))
    slope, icpt = fit_attenuation(lt, (100.0, 7000.0))
    assert slope == pytest.approx(-0.195, abs=1e-9)
    assert icpt == pytest.approx(5 * math.log10(prob[0] / lt.n0) + 0.195 * z[0] / 1e3, abs=1e-9)


def test_fit_needs_enough_bins():
    lt = to_log_trace(_ideal(np.full(50, 0.1)))
    with pytest.raises(ValueError):
        fit_attenuation(lt, (0.0, 3.0))


def test_rms_includes_zero_bins():
    prob = np.concatenate([np.full(10, 0.01), np.tile([0.0, 0.0002], 100)])
    lt = to_log_trace(_ideal(prob))
    z = lt.distance
    rms = rms_noise_level(lt, (z[10], z[-1]))
    assert rms == pytest.approx(5 * math.log10(math.sqrt(0.5 * 0.0002**2) / 0.01))


def test_rms_region_checks():
    lt = to_log_trace(_ideal(np.full(50, 0.1)))
    with pytest.raises(ValueError):
        rms_noise_level(lt, (1e6, 2e6))
    with pytest.raises(ValueError):
        rms_noise_level(lt, (0.0, 1e3))


# --- leading edge -----------------------------------------------------------


def test_leading_edge_interpolates_between_bins():
    v = np.array([0.0, 0.0, 0.0, 0.25, 0.75, 1.0, 1.0])
    tr = _ideal(v)
    pos = leading_edge_position(tr, 5, 0.5, group_index=N_IDX)
    # crossing halfway between centers 3.5 and 4.5 bins
    assert pos == pytest.approx(_z(4.0 * BW))


def test_leading_edge_errors():
    tr = _ideal(np.ones(5))
    with pytest.raises(DomainError):
        leading_edge_position(tr, 2, 1.5)
    with pytest.raises(DomainError):
        leading_edge_position(tr, 10)
    with pytest.raises(ValueError):
        leading_edge_position(tr, 3, peak_level=1.0, baseline=1.0 - 1e-9, search_bins=2)


# --- event detection --------------------------------------------------------


def _synthetic_fiber(n=20_000, splice_bin=8000, splice_db=0.5, refl_bin=14_000, pulse_bins=10):
    z = _z((np.arange(n) + 0.5) * BW)
    level = 0.2 * 0.195 * z / 1e3
    level = level + np.where(np.arange(n) >= splice_bin, 0.2 * splice_db * 5 / 5, 0.0)
    prob = 1e-2 * 10 ** (-level)
    prob[refl_bin : refl_bin + pulse_bins] *= 30
    return prob


def test_detects_reflection_and_splice():
    prob = _synthetic_fiber()
    lt = to_log_trace(_ideal(prob))
    events = detect_events(lt, 3.0, 0.3, pulse_width=100e-9)
    kinds = [e.kind for e in events]
    assert kinds == [LOSSY, REFLECTIVE]
    splice, refl = events
    assert splice.position == pytest.approx(_z(8000 * BW), abs=2 * _z(BW) + _z(100e-9))
    assert splice.magnitude == pytest.approx(0.5, abs=0.05)
    assert refl.position == pytest.approx(_z(14_000 * BW), abs=_z(BW))
    assert refl.magnitude > 3.0


def test_detection_region_and_thresholds():
    lt = to_log_trace(_ideal(_synthetic_fiber()))
    assert detect_events(lt, 3.0, 0.3, pulse_width=100e-9, region=(0.0, 500.0)) == []
    assert [e.kind for e in detect_events(lt, 3.0, 0.8, pulse_width=100e-9)] == [REFLECTIVE]
    with pytest.raises(DomainError):
        detect_events(lt, 0.0, 0.3)


def test_clean_fiber_has_no_events():
    z = _z((np.arange(20_000) + 0.5) * BW)
    lt = to_log_trace(_ideal(1e-2 * 10 ** (-0.2 * 0.195 * z / 1e3)))
    assert detect_events(lt, 3.0, 0.3, pulse_width=100e-9) == []


# --- stitching --------------------------------------------------------------


def test_stitch_scales_second_step():
    n = 2000
    base = 1e-3 * 10 ** (-np.arange(n) / 4000)
    a = _trace_from_prob(np.where(np.arange(n) < 1200, base, 0.0), valid=np.arange(n) < 1200)
    b_valid = np.arange(n) >= 800
    b = _trace_from_prob(np.where(b_valid, base * 10, 0.0), valid=b_valid)
    ov = (_z(900 * BW), _z(1100 * BW))
    st = stitch_traces(a, b, ov, N_IDX)
    assert st.valid.all()
    np.testing.assert_allclose(st.corrected, base, rtol=2e-3)
    np.testing.assert_allclose(st.prob, st.counts / st.exposure)


def test_stitch_alignment_and_overlap_errors():
    a = _trace_from_prob(np.full(100, 1e-3))
    with pytest.raises(ValueError):
        stitch_traces(a, _trace_from_prob(np.full(100, 1e-3), bw=2 * BW), (0.0, 50.0))
    with pytest.raises(ValueError):
        stitch_traces(a, _trace_from_prob(np.full(100, 1e-3), origin=BW / 3), (0.0, 50.0))
    with pytest.raises(ValueError):
        stitch_traces(a, a, (1e5, 2e5))


# --- report -----------------------------------------------------------------


def test_report_round_trip_and_consistency():
    rep = AnalysisReport(
        -0.195, 3.0, -39.19, (DetectedEvent(100.0, REFLECTIVE, 4.0),), 0.01, 0.0, (1.0, 2.0), (3.0, 4.0)
    )
    d = rep.to_dict()
    assert d["dynamic_range_db"] == pytest.approx(42.19)
    assert AnalysisReport.from_dict(d) == rep
    d["dynamic_range_db"] = 40.0
    with pytest.raises(ValueError):
        AnalysisReport.from_dict(d)
    with pytest.raises(ValueError):
        DetectedEvent.from_dict({"position_m": 1.0, "type": "bend", "magnitude_db": 1.0})


def test_analyze_on_synthetic_trace():
    prob = _synthetic_fiber(n=30_000, splice_db=0.0, refl_bin=20_000)
    prob[20_010:] = 1e-7
    lt, rep = analyze(_ideal(prob), fiber_length=_z(20_000 * BW), pulse_width=100e-9)
    assert rep.slope == pytest.approx(-0.195, abs=1e-6)
    assert rep.intercept == pytest.approx(0.0, abs=0.01)
    assert rep.rms_noise == pytest.approx(5 * math.log10(1e-7 / lt.n0), abs=1e-6)
    assert [e.kind for e in rep.events] == [REFLECTIVE]

import json
import math
import struct

import numpy as np
import pytest
import yaml

from votdr.analysis import AnalysisReport, DetectedEvent, Trace, to_log_trace
from votdr.config import ConfigError, RunConfig, config_from_dict, load_config
from votdr.eventfile import (
    MAGIC,
    EventFileError,
    decode_events,
    encode_events,
    read_events,
    write_events,
)
from votdr.model import GateSchedule
from votdr.render import CSV_COLUMNS, read_trace_csv, svg_document, trace_csv
from votdr.simulator import PhotonEventStream

BASE = {
    "fiber": {
        "segments": [{"length_m": 20000, "attenuation_db_per_km": 0.195}],
        "events": [{"position_m": 10000, "insertion_loss_db": 0.5, "reflectance_db": -40}],
    },
    "laser": {"peak_power_dbm": -45, "repetition_rate_hz": 4000},
    "acquisition": {"n_pulses": 100, "seed": 3},
    "analysis": {"bin_width_ns": 10, "overlap_m": [8000, 12000]},
    "step1": {"peak_power_dbm": -45},
    "step2": {"peak_power_dbm": -35, "gate_off_us": [[0, 80]]},
}


def _cfg(**patch):
    d = json.loads(json.dumps(BASE))
    for path, value in patch.items():
        node = d
        keys = path.split("__")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        if value is None:
            node.pop(keys[-1], None)
        else:
            node[keys[-1]] = value
    return d


# --- configuration ----------------------------------------------------------


def test_load_config_defaults_and_units(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(BASE))
    cfg = load_config(path)
    assert isinstance(cfg, RunConfig)
    assert cfg.plan.length == 20000
    assert cfg.laser.wavelength == pytest.approx(1549.87e-9)
    assert cfg.laser.pulse_width == pytest.approx(1e-6)
    assert cfg.detector.dead_time == pytest.approx(60e-9)
    assert cfg.detector.jitter_sigma == pytest.approx(500e-12)
    assert cfg.bin_width == pytest.approx(10e-9)
    assert cfg.window == cfg.detector.dead_time
    assert cfg.n_pulses == 100 and cfg.seed == 3
    assert cfg.plan.end_reflectance == -14.7


def test_config_round_trip():
    cfg = config_from_dict(BASE)
    assert config_from_dict(cfg.to_dict()) == cfg
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_duration_converts_to_pulses():
    cfg = config_from_dict(_cfg(acquisition__n_pulses=None, acquisition__duration_s=0.5))
    assert cfg.n_pulses == 2000


def test_step_overrides():
    cfg = config_from_dict(BASE)
    s2 = cfg.for_step(2)
    assert s2.laser.peak_power == -35
    assert s2.gate == GateSchedule(((0.0, 80e-6),))
    assert s2.plan == cfg.plan
    assert cfg.for_step(1).gate == GateSchedule()
    with pytest.raises(ConfigError):
        config_from_dict(_cfg(step1=None)).for_step(1)


def test_crosstalk_becomes_reflector_at_launch():
    cfg = config_from_dict(_cfg(fiber__crosstalk_reflectance_db=-50))
    assert cfg.plan.events[0].position == 0.0
    assert cfg.plan.events[0].reflectance == -50


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"fiber": None}, "fiber"),
        ({"fiber__segments": []}, "fiber.segments"),
        ({"fiber__segments": [{"length_m": -5}]}, "fiber.segments[0]"),
        ({"fiber__segments": [{"length_m": 10, "colour": "red"}]}, "fiber.segments[0].colour"),
        ({"laser__peak_power_dbm": "high"}, "laser.peak_power_dbm"),
        ({"laser__repetition_rate_hz": 1e5}, "laser.repetition_rate_hz"),
        ({"acquisition__duration_s": 1.0}, "acquisition.n_pulses"),
        ({"acquisition__n_pulses": None}, "acquisition.n_pulses"),
        ({"acquisition__n_pulses": 2.5}, "acquisition.n_pulses"),
        ({"acquisition__seed": -1}, "acquisition.seed"),
        ({"detector__dead_time_mode": "sticky"}, "detector.dead_time_mode"),
        ({"analysis__fit_region_m": [0, 30000]}, "analysis.fit_region_m"),
        ({"analysis__fit_region_m": [500, 100]}, "analysis.fit_region_m"),
        ({"analysis__bin_width_ns": 0}, "analysis.bin_width_ns"),
        ({"gate_off_us": [[0, 500]]}, "gate_off_us"),
        ({"step2__gate_off_us": [[10, 5]]}, "step2.gate_off_us"),
        ({"bogus": 1}, "bogus"),
    ],
)
def test_config_errors_name_the_field(patch, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(_cfg(**patch))
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_repetition_rate_error_names_bound():
    with pytest.raises(ConfigError, match="max_repetition_rate"):
        config_from_dict(_cfg(laser__repetition_rate_hz=1e5))


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("fiber: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(OSError):
        load_config(tmp_path / "missing.yaml")


# --- event files ------------------------------------------------------------


def _stream(meta=None):
    return PhotonEventStream(
        np.array([0, 0, 3, 7]),
        np.array([10, 2_000_000, 5, 99_999_999]),
        n_pulses=8,
        period_ps=100_000_000,
        seed=42,
        gate=GateSchedule(((1e-6, 2e-6),)),
        metadata=meta if meta is not None else {"acquisition": {"n_pulses": 8}, "x": math.inf},
    )


def test_event_file_layout(tmp_path):
    path = tmp_path / "a.votdr"
    write_events(_stream(), path)
    data = path.read_bytes()
    assert data[:6] == b"VOTDR1"
    version, hlen = struct.unpack_from("<HI", data, 6)
    assert version == 1
    header = json.loads(data[12 : 12 + hlen])
    assert header["count"] == 4
    assert header["config"]["acquisition"]["n_pulses"] == 8
    body = data[12 + hlen :]
    assert len(body) == 4 * 16
    assert struct.unpack_from("<QQ", body, 16) == (0, 2_000_000)


def test_event_file_round_trip(tmp_path):
    s = _stream()
    path = tmp_path / "a.votdr"
    write_events(s, path)
    assert read_events(path) == s
    assert encode_events(read_events(path)) == path.read_bytes()


def test_event_file_empty_stream():
    s = PhotonEventStream(np.zeros(0), np.zeros(0), 1, 1000)
    assert decode_events(encode_events(s)) == s


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda b: b"VOTDR2" + b[6:], "magic"),
        (lambda b: b[:4], "magic"),
        (lambda b: b[:9], "preamble"),
        (lambda b: b[:20], "header"),
        (lambda b: b[:-5], "records"),
        (lambda b: b + b"\0" * 16, "records"),
        (lambda b: b[:6] + struct.pack("<H", 9) + b[8:], "version"),
    ],
)
def test_event_file_corruption(mutate, message):
    data = encode_events(_stream())
    with pytest.raises(EventFileError, match=message):
        decode_events(mutate(data))


def test_event_file_rejects_unsorted_records():
    data = bytearray(encode_events(_stream()))
    hlen = struct.unpack_from("<I", data, 8)[0]
    start = 12 + hlen
    data[start : start + 16], data[start + 16 : start + 32] = (
        data[start + 16 : start + 32],
        data[start : start + 16],
    )
    with pytest.raises(EventFileError, match="sorted"):
        decode_events(bytes(data))


def test_event_file_rejects_out_of_range_record():
    s = PhotonEventStream(np.array([9]), np.array([5]), 8, 1000)
    with pytest.raises(EventFileError, match="outside"):
        decode_events(encode_events(s))


def test_event_file_magic_constant():
    assert MAGIC == b"VOTDR1"


# --- CSV and SVG ------------------------------------------------------------


def _log_trace():
    counts = np.array([40, 40, 40, 40, 40, 40, 40, 40, 40, 40, 4, 0, 7])
    valid = np.ones(len(counts), bool)
    valid[12] = False
    tr = Trace(1e-9, 1000, counts, counts / 1000, counts / 1000, valid)
    return to_log_trace(tr)


def test_csv_format():
    text = trace_csv(_log_trace())
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    row0 = lines[1].split(",")
    assert row0[0] == "0" and row0[2] == "40" and row0[5] == "0.000000000"
    assert lines[11].split(",")[5] == "-5.000000000"
    assert lines[12].endswith(",")
    assert lines[13].endswith(",")
    assert float(lines[2].split(",")[1]) == pytest.approx(299792458 * 1.5e-9 / (2 * 1.468), rel=1e-8)


def test_csv_round_trip(tmp_path):
    lt = _log_trace()
    path = tmp_path / "t.csv"
    path.write_text(trace_csv(lt))
    cols = read_trace_csv(path)
    np.testing.assert_array_equal(cols["counts"], lt.trace.counts)
    np.testing.assert_allclose(cols["corrected_prob"], lt.trace.corrected, rtol=1e-8)
    np.testing.assert_allclose(cols["log5_db"], lt.values, atol=1e-9)


def test_svg_is_deterministic():
    lt = _log_trace()
    rep = AnalysisReport(-0.2, 0.0, -10.0, (DetectedEvent(1.0, "reflective", 3.0),), fit_region=(0.5, 1.5))
    a = svg_document(lt, rep, "a<b")
    assert a == svg_document(lt, rep, "a<b")
    assert a.startswith("<svg") and a.rstrip().endswith("</svg>")
    assert "a&lt;b" in a
    assert "polyline" in a

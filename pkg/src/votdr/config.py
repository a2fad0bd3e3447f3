"""Run configuration: YAML schema, defaults and validation.

Keys carry their unit as a suffix (``_m``, ``_ns``, ``_dbm`` ...). Every
error names the offending field as a dotted path.

Schema (defaults in brackets)::

    fiber:
      segments:                       # at least one, tiled from z = 0
        - length_m: float
          attenuation_db_per_km: [0.2]
          backscatter_level_db: [-52]   # for a 1 us pulse
          group_index: [1.468]
      events:                         # sorted by position
        - position_m: float
          insertion_loss_db: [0]
          reflectance_db: [-inf]
      end_reflectance_db: [-14.7]
      crosstalk_reflectance_db: [null]  # circulator peak at z = 0
    laser:
      wavelength_nm: [1549.87]
      peak_power_dbm: [23]
      pulse_width_ns: [1000]
      repetition_rate_hz: [400]
      extinction_ratio_db: [inf]
    detector:
      efficiency: [0.15]
      dark_rate_hz: [80]
      dead_time_ns: [60]
      jitter_sigma_ps: [500]
      polarization_visibility: [0.9]
      polarization_correlation_length_m: [5000]
      dead_time_mode: [non-paralyzable]   # or paralyzable
      polarization_resample_every: [0]    # pulses; 0 = static track
    gate_off_us: [[]]                 # list of [start, end] within a period
    acquisition:
      n_pulses: int                   # exactly one of n_pulses / duration_s
      duration_s: float
      seed: [0]
      workers: [1]
    analysis:
      bin_width_ns: [1]
      correction_window_ns: [dead time]
      fit_region_m: [auto]
      tail_region_m: [auto]
      overlap_m: [null]               # needed to stitch two acquisitions
      reflect_threshold_db: [3]
      loss_threshold_db: [0.3]
    step1: / step2:                   # optional per-step overrides
      peak_power_dbm, gate_off_us, n_pulses | duration_s, seed
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .model import (
    DEFAULT_BACKSCATTER_DB,
    DEFAULT_END_REFLECTANCE_DB,
    DEFAULT_GROUP_INDEX,
    SPEED_OF_LIGHT,
    ConfigurationError,
    DetectorConfig,
    FiberPlan,
    FiberSegment,
    GateSchedule,
    LaserConfig,
    PointEvent,
)


class ConfigError(ConfigurationError):
    """Schema or invariant violation in a run configuration."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


_MISSING = object()


def _num(d: dict, key: str, path: str, default=_MISSING, *, integer=False):
    value = d.get(key, default)
    where = f"{path}.{key}" if path else key
    if value is _MISSING:
        raise ConfigError(where, "required field is missing")
    if value is None:
        return None
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", ".inf", "-inf", "-.inf"):
        value = -math.inf if value.strip().startswith("-") else math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(where, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _section(d: dict, key: str, path: str = "", *, required=False) -> dict:
    value = d.get(key)
    where = f"{path}.{key}" if path else key
    if value is None:
        if required:
            raise ConfigError(where, "required section is missing")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(where, "expected a mapping")
    return value


def _no_extra(d: dict, allowed: set, path: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        where = f"{path}.{extra[0]}" if path else extra[0]
        raise ConfigError(where, "unknown field")


def _region(d: dict, key: str, path: str):
    value = d.get(key)
    where = f"{path}.{key}"
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(where, "expected [start, end]")
    lo = _num({"v": value[0]}, "v", where)
    hi = _num({"v": value[1]}, "v", where)
    if not lo < hi:
        raise ConfigError(where, "start must be below end")
    return (lo, hi)


def _gate(value, path: str) -> GateSchedule:
    if value is None:
        return GateSchedule()
    if not isinstance(value, (list, tuple)):
        raise ConfigError(path, "expected a list of [start, end] pairs")
    ivs = []
    for i, pair in enumerate(value):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"{path}[{i}]", "expected [start, end]")
        a = _num({"v": pair[0]}, "v", f"{path}[{i}]")
        b = _num({"v": pair[1]}, "v", f"{path}[{i}]")
        ivs.append((a / 1e6, b / 1e6))
    try:
        return GateSchedule(tuple(ivs))
    except ConfigurationError as exc:
        raise ConfigError(path, str(exc)) from None


def _wrap(path: str, build):
    try:
        return build()
    except ConfigError:
        raise
    except ConfigurationError as exc:
        raise ConfigError(path, str(exc)) from None


_SEGMENT_KEYS = {"length_m", "attenuation_db_per_km", "backscatter_level_db", "group_index"}
_EVENT_KEYS = {"position_m", "insertion_loss_db", "reflectance_db"}
_FIBER_KEYS = {"segments", "events", "end_reflectance_db", "crosstalk_reflectance_db"}
_LASER_KEYS = {
    "wavelength_nm",
    "peak_power_dbm",
    "pulse_width_ns",
    "repetition_rate_hz",
    "extinction_ratio_db",
}
_DETECTOR_KEYS = {
    "efficiency",
    "dark_rate_hz",
    "dead_time_ns",
    "jitter_sigma_ps",
    "polarization_visibility",
    "polarization_correlation_length_m",
    "dead_time_mode",
    "polarization_resample_every",
}
_ACQ_KEYS = {"n_pulses", "duration_s", "seed", "workers"}
_ANALYSIS_KEYS = {
    "bin_width_ns",
    "correction_window_ns",
    "fit_region_m",
    "tail_region_m",
    "overlap_m",
    "reflect_threshold_db",
    "loss_threshold_db",
}
_STEP_KEYS = {"peak_power_dbm", "gate_off_us", "n_pulses", "duration_s", "seed"}
_TOP_KEYS = {"fiber", "laser", "detector", "gate_off_us", "acquisition", "analysis", "step1", "step2"}


def _parse_plan(d: dict) -> FiberPlan:
    fiber = _section(d, "fiber", required=True)
    _no_extra(fiber, _FIBER_KEYS, "fiber")
    raw_segments = fiber.get("segments")
    if not isinstance(raw_segments, list) or not raw_segments:
        raise ConfigError("fiber.segments", "expected a non-empty list")
    segments = []
    for i, s in enumerate(raw_segments):
        path = f"fiber.segments[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(path, "expected a mapping")
        _no_extra(s, _SEGMENT_KEYS, path)
        segments.append(
            _wrap(
                path,
                lambda s=s, path=path: FiberSegment(
                    _num(s, "length_m", path),
                    _num(s, "attenuation_db_per_km", path, 0.2),
                    _num(s, "backscatter_level_db", path, DEFAULT_BACKSCATTER_DB),
                    _num(s, "group_index", path, DEFAULT_GROUP_INDEX),
                ),
            )
        )
    events = []
    raw_events = fiber.get("events") or []
    if not isinstance(raw_events, list):
        raise ConfigError("fiber.events", "expected a list")
    for i, e in enumerate(raw_events):
        path = f"fiber.events[{i}]"
        if not isinstance(e, dict):
            raise ConfigError(path, "expected a mapping")
        _no_extra(e, _EVENT_KEYS, path)
        events.append(
            _wrap(
                path,
                lambda e=e, path=path: PointEvent(
                    _num(e, "position_m", path),
                    _num(e, "insertion_loss_db", path, 0.0),
                    _num(e, "reflectance_db", path, -math.inf),
                ),
            )
        )
    crosstalk = _num(fiber, "crosstalk_reflectance_db", "fiber", None)
    if crosstalk is not None and math.isfinite(crosstalk):
        events.insert(0, _wrap("fiber.crosstalk_reflectance_db", lambda: PointEvent(0.0, 0.0, crosstalk)))
    plan = _wrap(
        "fiber",
        lambda: FiberPlan(
            tuple(segments),
            tuple(events),
            _num(fiber, "end_reflectance_db", "fiber", DEFAULT_END_REFLECTANCE_DB),
        ),
    )
    return plan


def _parse_laser(d: dict, overrides: dict | None = None) -> LaserConfig:
    sec = dict(_section(d, "laser"))
    _no_extra(sec, _LASER_KEYS, "laser")
    if overrides and "peak_power_dbm" in overrides:
        sec["peak_power_dbm"] = overrides["peak_power_dbm"]
    return _wrap(
        "laser",
        lambda: LaserConfig(
            wavelength=_num(sec, "wavelength_nm", "laser", 1549.87) / 1e9,
            peak_power=_num(sec, "peak_power_dbm", "laser", 23.0),
            pulse_width=_num(sec, "pulse_width_ns", "laser", 1000.0) / 1e9,
            repetition_rate=_num(sec, "repetition_rate_hz", "laser", 400.0),
            extinction_ratio=_num(sec, "extinction_ratio_db", "laser", math.inf),
        ),
    )


def _parse_detector(d: dict) -> DetectorConfig:
    sec = _section(d, "detector")
    _no_extra(sec, _DETECTOR_KEYS, "detector")
    mode = sec.get("dead_time_mode", "non-paralyzable")
    if mode not in ("non-paralyzable", "paralyzable"):
        raise ConfigError("detector.dead_time_mode", f"expected non-paralyzable or paralyzable, got {mode!r}")
    return _wrap(
        "detector",
        lambda: DetectorConfig(
            efficiency=_num(sec, "efficiency", "detector", 0.15),
            dark_rate=_num(sec, "dark_rate_hz", "detector", 80.0),
            dead_time=_num(sec, "dead_time_ns", "detector", 60.0) / 1e9,
            jitter_sigma=_num(sec, "jitter_sigma_ps", "detector", 500.0) / 1e12,
            polarization_visibility=_num(sec, "polarization_visibility", "detector", 0.9),
            polarization_correlation_length=_num(
                sec, "polarization_correlation_length_m", "detector", 5000.0
            ),
            paralyzable=mode == "paralyzable",
            polarization_resample_every=_num(
                sec, "polarization_resample_every", "detector", 0, integer=True
            ),
        ),
    )


def _pulse_count(sec: dict, path: str, rep_rate: float, required: bool):
    has_n = sec.get("n_pulses") is not None
    has_d = sec.get("duration_s") is not None
    if has_n and has_d:
        raise ConfigError(f"{path}.n_pulses", "give exactly one of n_pulses and duration_s")
    if not (has_n or has_d):
        if required:
            raise ConfigError(f"{path}.n_pulses", "give exactly one of n_pulses and duration_s")
        return None
    if has_n:
        n = _num(sec, "n_pulses", path, integer=True)
    else:
        duration = _num(sec, "duration_s", path)
        if duration <= 0:
            raise ConfigError(f"{path}.duration_s", "must be > 0")
        n = int(round(duration * rep_rate))
    if n < 1:
        raise ConfigError(f"{path}.n_pulses", "must be >= 1")
    return n


def _u(si: float, scale: float) -> float:
    """Value in scaled units that parses back (``v / scale``) to ``si`` exactly,
    preferring a short decimal form."""
    short = float(f"{si * scale:.12g}")
    if short / scale == si:
        return short
    v = si * scale
    for _ in range(4):
        if v / scale == si:
            return v
        v = math.nextafter(v, math.inf if v / scale < si else -math.inf)
    return si * scale


@dataclass(frozen=True)
class RunConfig:
    plan: FiberPlan
    laser: LaserConfig
    detector: DetectorConfig
    gate: GateSchedule = field(default_factory=GateSchedule)
    n_pulses: int = 1
    seed: int = 0
    workers: int = 1
    bin_width: float = 1e-9
    correction_window: float | None = None  # None -> detector dead time
    fit_region: tuple[float, float] | None = None
    tail_region: tuple[float, float] | None = None
    overlap: tuple[float, float] | None = None
    reflect_threshold: float = 3.0
    loss_threshold: float = 0.3
    step1: dict | None = None
    step2: dict | None = None

    @property
    def window(self) -> float:
        return self.detector.dead_time if self.correction_window is None else self.correction_window

    @property
    def group_index(self) -> float:
        return self.plan.segments[0].group_index

    def for_step(self, step: int) -> "RunConfig":
        """Apply the ``step1`` / ``step2`` overrides."""
        raw = {1: self.step1, 2: self.step2}[step]
        if raw is None:
            raise ConfigError(f"step{step}", "no overrides configured for this step")
        d = self.to_dict()
        d.pop("step1", None)
        d.pop("step2", None)
        if "peak_power_dbm" in raw:
            d["laser"]["peak_power_dbm"] = raw["peak_power_dbm"]
        if "gate_off_us" in raw:
            d["gate_off_us"] = raw["gate_off_us"]
        if "n_pulses" in raw or "duration_s" in raw:
            d["acquisition"].pop("n_pulses", None)
            d["acquisition"].pop("duration_s", None)
            for key in ("n_pulses", "duration_s"):
                if key in raw:
                    d["acquisition"][key] = raw[key]
        if "seed" in raw:
            d["acquisition"]["seed"] = raw["seed"]
        return config_from_dict(d)

    def to_dict(self) -> dict:
        """Schema-shaped snapshot with every default filled in."""
        plan, laser, det = self.plan, self.laser, self.detector
        out: dict[str, Any] = {
            "fiber": {
                "segments": [
                    {
                        "length_m": s.length,
                        "attenuation_db_per_km": s.attenuation,
                        "backscatter_level_db": s.backscatter_level,
                        "group_index": s.group_index,
                    }
                    for s in plan.segments
                ],
                "events": [
                    {
                        "position_m": e.position,
                        "insertion_loss_db": e.insertion_loss,
                        "reflectance_db": e.reflectance,
                    }
                    for e in plan.events
                ],
                "end_reflectance_db": plan.end_reflectance,
            },
            "laser": {
                "wavelength_nm": _u(laser.wavelength, 1e9),
                "peak_power_dbm": laser.peak_power,
                "pulse_width_ns": _u(laser.pulse_width, 1e9),
                "repetition_rate_hz": laser.repetition_rate,
                "extinction_ratio_db": laser.extinction_ratio,
            },
            "detector": {
                "efficiency": det.efficiency,
                "dark_rate_hz": det.dark_rate,
                "dead_time_ns": _u(det.dead_time, 1e9),
                "jitter_sigma_ps": _u(det.jitter_sigma, 1e12),
                "polarization_visibility": det.polarization_visibility,
                "polarization_correlation_length_m": det.polarization_correlation_length,
                "dead_time_mode": "paralyzable" if det.paralyzable else "non-paralyzable",
                "polarization_resample_every": det.polarization_resample_every,
            },
            "gate_off_us": [[_u(a, 1e6), _u(b, 1e6)] for a, b in self.gate.intervals],
            "acquisition": {"n_pulses": self.n_pulses, "seed": self.seed, "workers": self.workers},
            "analysis": {
                "bin_width_ns": _u(self.bin_width, 1e9),
                "correction_window_ns": None if self.correction_window is None else _u(self.correction_window, 1e9),
                "fit_region_m": list(self.fit_region) if self.fit_region else None,
                "tail_region_m": list(self.tail_region) if self.tail_region else None,
                "overlap_m": list(self.overlap) if self.overlap else None,
                "reflect_threshold_db": self.reflect_threshold,
                "loss_threshold_db": self.loss_threshold,
            },
        }
        if self.step1 is not None:
            out["step1"] = dict(self.step1)
        if self.step2 is not None:
            out["step2"] = dict(self.step2)
        return out


def _parse_step(d: dict, key: str, rep_rate: float):
    sec = d.get(key)
    if sec is None:
        return None
    if not isinstance(sec, dict):
        raise ConfigError(key, "expected a mapping")
    _no_extra(sec, _STEP_KEYS, key)
    out = {}
    if "peak_power_dbm" in sec:
        out["peak_power_dbm"] = _num(sec, "peak_power_dbm", key)
    if "gate_off_us" in sec:
        _gate(sec["gate_off_us"], f"{key}.gate_off_us")
        out["gate_off_us"] = [list(map(float, p)) for p in sec["gate_off_us"] or []]
    n = _pulse_count(sec, key, rep_rate, required=False)
    if n is not None:
        out["n_pulses"] = n
    if "seed" in sec:
        out["seed"] = _num(sec, "seed", key, integer=True)
    return out


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("(root)", "expected a mapping at the top level")
    _no_extra(d, _TOP_KEYS, "")
    plan = _parse_plan(d)
    laser = _parse_laser(d)
    detector = _parse_detector(d)
    gate = _gate(d.get("gate_off_us"), "gate_off_us")

    try:
        laser.check_against(plan)
    except ConfigurationError as exc:
        raise ConfigError("laser.repetition_rate_hz", str(exc)) from None
    try:
        gate.check_period(laser.period)
    except ConfigurationError as exc:
        raise ConfigError("gate_off_us", str(exc)) from None

    acq = _section(d, "acquisition", required=True)
    _no_extra(acq, _ACQ_KEYS, "acquisition")
    n_pulses = _pulse_count(acq, "acquisition", laser.repetition_rate, required=True)
    seed = _num(acq, "seed", "acquisition", 0, integer=True)
    if seed < 0:
        raise ConfigError("acquisition.seed", "must be >= 0")
    workers = _num(acq, "workers", "acquisition", 1, integer=True)
    if workers < 1:
        raise ConfigError("acquisition.workers", "must be >= 1")

    ana = _section(d, "analysis")
    _no_extra(ana, _ANALYSIS_KEYS, "analysis")
    bin_width = _num(ana, "bin_width_ns", "analysis", 1.0) / 1e9
    if not bin_width >= 1e-12:
        raise ConfigError("analysis.bin_width_ns", "must be at least 1 ps")
    if bin_width > laser.period:
        raise ConfigError("analysis.bin_width_ns", "exceeds the pulse period")
    window = _num(ana, "correction_window_ns", "analysis", None)
    if window is not None:
        if window < 0:
            raise ConfigError("analysis.correction_window_ns", "must be >= 0")
        window /= 1e9

    length = plan.length
    z_period = SPEED_OF_LIGHT * laser.period / (2.0 * plan.segments[-1].group_index)
    fit_region = _region(ana, "fit_region_m", "analysis")
    overlap = _region(ana, "overlap_m", "analysis")
    tail_region = _region(ana, "tail_region_m", "analysis")
    for name, reg, top in (("fit_region_m", fit_region, length), ("overlap_m", overlap, length)):
        if reg is not None and (reg[0] < 0 or reg[1] > top):
            raise ConfigError(f"analysis.{name}", f"must lie within the plan [0, {top:g}] m")
    if tail_region is not None and (tail_region[0] < 0 or tail_region[1] > z_period):
        raise ConfigError("analysis.tail_region_m", f"must lie within [0, {z_period:g}] m")
    reflect = _num(ana, "reflect_threshold_db", "analysis", 3.0)
    loss = _num(ana, "loss_threshold_db", "analysis", 0.3)
    if reflect <= 0:
        raise ConfigError("analysis.reflect_threshold_db", "must be > 0")
    if loss <= 0:
        raise ConfigError("analysis.loss_threshold_db", "must be > 0")

    step1 = _parse_step(d, "step1", laser.repetition_rate)
    step2 = _parse_step(d, "step2", laser.repetition_rate)
    for key, step in (("step1", step1), ("step2", step2)):
        if step and "gate_off_us" in step:
            try:
                _gate(step["gate_off_us"], f"{key}.gate_off_us").check_period(laser.period)
            except ConfigurationError as exc:
                raise ConfigError(f"{key}.gate_off_us", str(exc)) from None

    return RunConfig(
        plan=plan,
        laser=laser,
        detector=detector,
        gate=gate,
        n_pulses=n_pulses,
        seed=seed,
        workers=workers,
        bin_width=bin_width,
        correction_window=window,
        fit_region=fit_region,
        tail_region=tail_region,
        overlap=overlap,
        reflect_threshold=reflect,
        loss_threshold=loss,
        step1=step1,
        step2=step2,
    )


def load_config(path) -> RunConfig:
    """Read and validate a YAML run configuration.

    Raises
    ------
    OSError
        If the file cannot be read.
    ConfigError
        On malformed YAML, schema violations or invariant violations; the
        message starts with the dotted field path.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("(file)", f"not valid YAML: {exc}") from None
    return config_from_dict(data)


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **changes)

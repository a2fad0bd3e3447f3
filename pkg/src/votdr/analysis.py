"""From time tags to an OTDR report.

The chain is ``bin_events`` -> ``dead_time_correction`` -> (optionally
``stitch_traces``) -> ``to_log_trace`` -> ``detect_events`` /
``fit_attenuation`` / ``rms_noise_level`` -> ``dynamic_range``. Log traces
use the single-pass convention ``5*log10(N/N0)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .model import DEFAULT_GROUP_INDEX, SPEED_OF_LIGHT, DomainError
from .simulator import PS, PhotonEventStream

REFLECTIVE = "reflective"
LOSSY = "lossy"


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Trace:
    """Histogram of detections against round-trip delay.

    ``prob`` is detections per pulse in each bin, ``corrected`` the same
    after dead-time correction. ``exposure`` is the effective number of
    pulses behind each bin (``n_pulses`` for a raw trace; scaled after
    stitching) so that ``prob == counts / exposure`` always holds. Bins with
    ``valid == False`` were gated off or saturated.
    """

    bin_width: float
    n_pulses: int
    counts: np.ndarray
    prob: np.ndarray
    corrected: np.ndarray
    valid: np.ndarray
    origin_delay: float = 0.0
    exposure: np.ndarray | None = None

    def __post_init__(self):
        counts = _frozen(self.counts, np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "prob", _frozen(self.prob, float))
        object.__setattr__(self, "corrected", _frozen(self.corrected, float))
        object.__setattr__(self, "valid", _frozen(self.valid, bool))
        exposure = self.exposure
        if exposure is None:
            exposure = np.full(len(counts), float(self.n_pulses))
        object.__setattr__(self, "exposure", _frozen(exposure, float))
        n = len(counts)
        for name in ("prob", "corrected", "valid", "exposure"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has a different length from counts")

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def bin_starts(self) -> np.ndarray:
        return self.origin_delay + np.arange(len(self)) * self.bin_width

    @property
    def bin_centers(self) -> np.ndarray:
        return self.origin_delay + (np.arange(len(self)) + 0.5) * self.bin_width

    def distance(self, group_index: float = DEFAULT_GROUP_INDEX) -> np.ndarray:
        return SPEED_OF_LIGHT * self.bin_centers / (2.0 * group_index)


@dataclass(frozen=True, eq=False)
class LogTrace:
    """``5*log10(corrected/N0)`` per bin; ``-inf`` marks empty or invalid bins."""

    trace: Trace
    values: np.ndarray
    distance: np.ndarray
    n0: float
    group_index: float = DEFAULT_GROUP_INDEX

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def linear(self) -> np.ndarray:
        return self.trace.corrected


@dataclass(frozen=True)
class DetectedEvent:
    position: float  # m
    kind: str  # REFLECTIVE or LOSSY
    magnitude: float  # dB, 5*log10 convention

    def to_dict(self) -> dict:
        return {"position_m": self.position, "type": self.kind, "magnitude_db": self.magnitude}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectedEvent":
        if d["type"] not in (REFLECTIVE, LOSSY):
            raise ValueError(f"unknown event type {d['type']!r}")
        return cls(float(d["position_m"]), d["type"], float(d["magnitude_db"]))


@dataclass(frozen=True)
class AnalysisReport:
    slope: float  # dB/km, signed
    intercept: float  # dB at z = 0
    rms_noise: float  # dB
    events: tuple[DetectedEvent, ...] = ()
    n0: float = float("nan")
    initial_level: float = float("nan")  # dB of the N0 bins, 0 by construction of N0
    fit_region: tuple[float, float] | None = None
    tail_region: tuple[float, float] | None = None
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def dynamic_range(self) -> float:
        return dynamic_range(self.intercept, self.rms_noise)

    def to_dict(self) -> dict:
        return {
            "slope_db_per_km": self.slope,
            "intercept_db": self.intercept,
            "rms_noise_db": self.rms_noise,
            "dynamic_range_db": self.dynamic_range,
            "n0": self.n0,
            "initial_level_db": self.initial_level,
            "fit_region_m": list(self.fit_region) if self.fit_region else None,
            "tail_region_m": list(self.tail_region) if self.tail_region else None,
            "events": [e.to_dict() for e in self.events],
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisReport":
        report = cls(
            slope=float(d["slope_db_per_km"]),
            intercept=float(d["intercept_db"]),
            rms_noise=float(d["rms_noise_db"]),
            events=tuple(DetectedEvent.from_dict(e) for e in d.get("events", ())),
            n0=float(d.get("n0", float("nan"))),
            initial_level=float(d.get("initial_level_db", float("nan"))),
            fit_region=tuple(d["fit_region_m"]) if d.get("fit_region_m") else None,
            tail_region=tuple(d["tail_region_m"]) if d.get("tail_region_m") else None,
            extra=dict(d.get("extra") or {}),
        )
        stored = d.get("dynamic_range_db")
        if stored is not None and float(stored) != report.dynamic_range:
            raise ValueError("dynamic_range_db differs from intercept_db - rms_noise_db")
        return report


def bin_events(stream: PhotonEventStream, bin_width: float) -> Trace:
    """Histogram a stream into bins of ``bin_width`` seconds over one period.

    Bins overlapping a gate-off interval are marked invalid.
    """
    if not bin_width > 0:
        raise DomainError("bin_width must be > 0")
    bw_ps = int(round(bin_width * PS))
    if bw_ps < 1:
        raise DomainError("bin_width is below the 1 ps timestamp resolution")
    if bw_ps > stream.period_ps:
        raise DomainError("bin_width exceeds the pulse period")
    n_bins = -(-stream.period_ps // bw_ps)
    counts = kernels.histogram(stream.timestamp, bw_ps, n_bins)
    valid = np.ones(n_bins, dtype=bool)
    lo = np.arange(n_bins, dtype=np.int64) * bw_ps
    for a, b in stream.gate.intervals:
        a_ps, b_ps = round(a * PS), round(b * PS)
        valid &= ~((lo < b_ps) & (lo + bw_ps > a_ps))
    prob = counts / stream.n_pulses
    return Trace(bw_ps / PS, stream.n_pulses, counts, prob, prob, valid)


def dead_time_correction(trace: Trace, window: float) -> Trace:
    """Divide each bin by the probability that the detector was live.

    ``corrected(t) = prob(t) / (1 - sum of prob over (t - window, t))``.
    A fractional last bin contributes in proportion. Bins whose denominator
    is not positive are flagged invalid and left uncorrected.
    """
    if window < 0:
        raise DomainError("window must be >= 0")
    if window == 0 or len(trace) == 0:
        return replace(trace, corrected=trace.prob)
    ratio = window / trace.bin_width
    m = int(math.floor(ratio + 1e-9))
    frac = ratio - m if ratio - m > 1e-9 else 0.0

    # integer cumulative counts keep an all-zero history exactly zero
    c = np.concatenate([[0], np.cumsum(trace.counts)])
    k = np.arange(len(trace))
    history = (c[k] - c[np.maximum(k - m, 0)]).astype(float)
    if frac:
        j = k - m - 1
        history += frac * np.where(j >= 0, trace.counts[np.maximum(j, 0)], 0)
    dead = history / trace.exposure
    denom = 1.0 - dead
    saturated = denom <= 0
    corrected = np.where(saturated, trace.prob, trace.prob / np.where(saturated, 1.0, denom))
    return replace(trace, corrected=corrected, valid=trace.valid & ~saturated)


def _n0_value(trace: Trace, strategy, n_first: int) -> float:
    if isinstance(strategy, str):
        if strategy != "first":
            raise ValueError(f"unknown N0 strategy {strategy!r}")
        vals = trace.corrected[trace.valid][:n_first]
        return float(vals.mean()) if len(vals) else 0.0
    return float(strategy)


def to_log_trace(
    trace: Trace,
    n0_strategy="first",
    group_index: float = DEFAULT_GROUP_INDEX,
    n_first: int = 10,
) -> LogTrace:
    """Convert to ``5*log10(corrected/N0)`` against distance.

    ``n0_strategy`` is ``"first"`` (mean of the first ``n_first`` valid
    corrected bins) or an explicit positive reference value.
    """
    n0 = _n0_value(trace, n0_strategy, n_first)
    if not n0 > 0:
        raise DomainError("reference N0 must be > 0")
    values = np.full(len(trace), -np.inf)
    ok = trace.valid & (trace.corrected > 0)
    values[ok] = 5.0 * np.log10(trace.corrected[ok] / n0)
    values.flags.writeable = False
    return LogTrace(trace, values, trace.distance(group_index), n0, group_index)


def _delay_for(z: float, group_index: float) -> float:
    return 2.0 * group_index * z / SPEED_OF_LIGHT


def stitch_traces(
    step1: Trace,
    step2: Trace,
    overlap: tuple[float, float],
    group_index: float = DEFAULT_GROUP_INDEX,
) -> Trace:
    """Join a near-end and a far-end acquisition into one trace.

    ``step2`` is scaled so its mean corrected value over the ``overlap``
    distance range matches ``step1``; the output switches from ``step1`` to
    the scaled ``step2`` at the middle of the overlap.
    """
    if not math.isclose(step1.bin_width, step2.bin_width, rel_tol=1e-12):
        raise ValueError("traces must share a bin width")
    bw = step1.bin_width
    shift = (step2.origin_delay - step1.origin_delay) / bw
    if abs(shift - round(shift)) > 1e-6:
        raise ValueError("trace origins are not aligned to a common bin grid")
    shift = int(round(shift))
    start = min(0, shift)
    end = max(len(step1), shift + len(step2))
    n = end - start
    origin = step1.origin_delay + start * bw

    def place(tr: Trace, offset: int):
        out = {
            "counts": np.zeros(n, np.int64),
            "prob": np.zeros(n),
            "corrected": np.zeros(n),
            "valid": np.zeros(n, bool),
            "exposure": np.zeros(n),
            "present": np.zeros(n, bool),
        }
        sl = slice(offset - start, offset - start + len(tr))
        out["counts"][sl] = tr.counts
        out["prob"][sl] = tr.prob
        out["corrected"][sl] = tr.corrected
        out["valid"][sl] = tr.valid
        out["exposure"][sl] = tr.exposure
        out["present"][sl] = True
        return out

    a = place(step1, 0)
    b = place(step2, shift)
    centers = origin + (np.arange(n) + 0.5) * bw
    lo, hi = sorted(overlap)
    in_ov = (centers >= _delay_for(lo, group_index)) & (centers <= _delay_for(hi, group_index))
    both = in_ov & a["valid"] & b["valid"]
    if not both.any():
        raise ValueError("overlap region contains no bins valid in both traces")
    m1 = a["corrected"][both].mean()
    m2 = b["corrected"][both].mean()
    if m1 == 0 or m2 == 0:
        raise ValueError("a trace has zero mean over the overlap region")
    scale = m1 / m2

    use_b = centers >= _delay_for(0.5 * (lo + hi), group_index)
    use_b = (use_b & b["present"]) | ~a["present"]
    counts = np.where(use_b, b["counts"], a["counts"])
    prob = np.where(use_b, b["prob"] * scale, a["prob"])
    corrected = np.where(use_b, b["corrected"] * scale, a["corrected"])
    valid = np.where(use_b, b["valid"], a["valid"])
    exposure = np.where(use_b, b["exposure"] / scale, a["exposure"])
    return Trace(bw, step1.n_pulses, counts, prob, corrected, valid, origin, exposure)


def fit_attenuation(
    log_trace: LogTrace, region: tuple[float, float], exclude=None
) -> tuple[float, float]:
    """Least-squares line through the log trace over ``region`` (meters).

    Returns ``(slope_db_per_km, intercept_db)`` with the intercept taken at
    z = 0. Sentinel bins and bins flagged in ``exclude`` are skipped.
    """
    lo, hi = sorted(region)
    z = log_trace.distance
    sel = log_trace.finite & (z >= lo) & (z <= hi)
    if exclude is not None:
        sel &= ~np.asarray(exclude, dtype=bool)
    if sel.sum() < 10:
        raise ValueError(f"fit region has {int(sel.sum())} usable bins, need at least 10")
    x = z[sel] / 1e3
    y = log_trace.values[sel]
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    return slope, float(ym - slope * xm)


def rms_noise_level(log_trace: LogTrace, tail_region: tuple[float, float]) -> float:
    """RMS of the linear tail values, expressed as ``5*log10(rms/N0)``.

    Empty bins are real zeros in the linear domain and are included; only
    gated or saturated bins are skipped.
    """
    lo, hi = sorted(tail_region)
    z = log_trace.distance
    sel = log_trace.trace.valid & (z >= lo) & (z <= hi)
    n = int(sel.sum())
    if n == 0:
        raise ValueError("tail region is empty")
    if n < 100:
        raise ValueError(f"tail region has {n} bins, need at least 100")
    rms = math.sqrt(float(np.mean(np.square(log_trace.linear[sel]))))
    if rms == 0:
        return -math.inf
    return 5.0 * math.log10(rms / log_trace.n0)


def dynamic_range(intercept: float, rms_noise: float) -> float:
    return intercept - rms_noise


def leading_edge_position(
    trace: Trace,
    peak_bin: int,
    fraction: float = 0.5,
    *,
    baseline: float | None = None,
    peak_level: float | None = None,
    group_index: float = DEFAULT_GROUP_INDEX,
    search_bins: int = 1000,
) -> float:
    """Distance (m) where the rising edge of a peak crosses
    ``baseline + fraction * (peak - baseline)``.

    Walks back from ``peak_bin`` to the first bin below the threshold and
    interpolates linearly between bin centers. ``peak_level`` defaults to
    the corrected value at ``peak_bin``; ``baseline`` to the minimum over
    the search window.
    """
    if not 0 < fraction < 1:
        raise DomainError("fraction must lie in (0, 1)")
    v = trace.corrected
    if not 0 <= peak_bin < len(v):
        raise DomainError("peak_bin outside the trace")
    lo = max(0, peak_bin - search_bins)
    if peak_level is None:
        peak_level = float(v[peak_bin])
    if baseline is None:
        window = v[lo:peak_bin][trace.valid[lo:peak_bin]]
        baseline = float(window.min()) if len(window) else 0.0
    threshold = baseline + fraction * (peak_level - baseline)
    k = peak_bin
    while k > lo:
        k -= 1
        if not trace.valid[k]:
            break
        if v[k] < threshold:
            rise = v[k + 1] - v[k]
            frac = (threshold - v[k]) / rise if rise > 0 else 0.5
            t = trace.origin_delay + (k + 0.5 + frac) * trace.bin_width
            return SPEED_OF_LIGHT * t / (2.0 * group_index)
    raise ValueError("no threshold crossing before the peak within the search window")


def _boxcar(values, valid, width):
    """Centered running mean over valid bins (NaN where none)."""
    x = np.where(valid, values, 0.0)
    c = np.concatenate([[0.0], np.cumsum(x)])
    m = np.concatenate([[0], np.cumsum(valid.astype(np.int64))])
    n = len(x)
    half = width // 2
    i = np.arange(n)
    a = np.clip(i - half, 0, n)
    b = np.clip(i - half + width, 0, n)
    cnt = m[b] - m[a]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, (c[b] - c[a]) / np.maximum(cnt, 1), np.nan)


def _rolling_nanmedian(x, window):
    window = max(1, window | 1)
    half = window // 2
    padded = np.concatenate([np.full(half, np.nan), x, np.full(half, np.nan)])
    view = np.lib.stride_tricks.sliding_window_view(padded, window)
    with warnings.catch_warnings():
        # all-NaN windows are expected past the fiber end
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(view, axis=1)


def _runs(mask):
    """Start/stop index pairs of True runs."""
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def local_baseline(log_trace: LogTrace, pulse_width: float):
    """Smoothed linear trace and its running-median baseline.

    The smoothing width is a quarter pulse; the median spans five pulse
    widths, which reflection peaks (one pulse wide) cannot pull up.
    """
    trace = log_trace.trace
    pulse_bins = max(1, int(round(pulse_width / trace.bin_width)))
    w = max(1, pulse_bins // 4)
    smooth = _boxcar(trace.corrected, trace.valid, w)
    idx = np.arange(0, len(trace), w)
    base = _rolling_nanmedian(smooth[idx], max(3, 5 * pulse_bins // w))
    good = np.isfinite(base)
    if good.any():
        base = np.interp(np.arange(len(trace)), idx[good], base[good])
    else:
        base = np.zeros(len(trace))
    return smooth, base, pulse_bins, w


def detect_events(
    log_trace: LogTrace,
    reflect_threshold: float = 3.0,
    loss_threshold: float = 0.3,
    *,
    pulse_width: float = 1e-6,
    region: tuple[float, float] | None = None,
    loss_region: tuple[float, float] | None = None,
    fraction: float = 0.5,
    significance: float = 5.0,
) -> list[DetectedEvent]:
    """Find reflective peaks and lossy steps.

    Reflective: runs of the smoothed trace more than ``reflect_threshold``
    dB above the running-median baseline (and ``significance`` Poisson
    sigmas above it in counts), located by their leading edge. Lossy:
    positions where lines fitted over the trace on either side disagree by
    more than ``loss_threshold`` dB. Thresholds are in the ``5*log10``
    convention of the log trace. ``region`` (meters) limits the search;
    ``loss_region`` further limits the data and positions used for lossy
    steps (keep it clear of the fiber end, where the trace falls away).
    """
    if reflect_threshold <= 0 or loss_threshold <= 0:
        raise DomainError("thresholds must be > 0")
    trace = log_trace.trace
    n = len(trace)
    if n == 0:
        return []
    z = log_trace.distance
    in_region = np.ones(n, bool)
    if region is not None:
        lo, hi = sorted(region)
        in_region = (z >= lo) & (z <= hi)
    loss_in = in_region.copy()
    if loss_region is not None:
        lo, hi = sorted(loss_region)
        loss_in &= (z >= lo) & (z <= hi)

    smooth, base, pulse_bins, w = local_baseline(log_trace, pulse_width)
    exposure = np.maximum(trace.exposure, 1.0)
    with np.errstate(invalid="ignore"):
        excess_counts = (smooth - base) * exposure * w
        noise = significance * np.sqrt(np.maximum(base, 0) * exposure * w + 1.0)
        hot = (smooth > base * 10.0 ** (reflect_threshold / 5.0)) & (excess_counts > noise)
    hot &= in_region & np.isfinite(smooth)

    runs = []
    for a, b in _runs(hot):
        if runs and a - runs[-1][1] <= pulse_bins:
            runs[-1] = (runs[-1][0], b)
        else:
            runs.append((a, b))

    events = []
    reflective_zone = np.zeros(n, bool)
    for a, b in runs:
        if b - a < w:
            continue
        peak = a + int(np.nanargmax(smooth[a:b]))
        magnitude = 5.0 * math.log10(smooth[peak] / base[peak]) if base[peak] > 0 else math.inf
        lo_i, hi_i = a + w, max(a + w, b - w)
        interior = trace.corrected[lo_i:hi_i][trace.valid[lo_i:hi_i]]
        if len(interior) >= 0.5 * (hi_i - lo_i) and len(interior):
            level = float(np.median(interior))
        else:  # saturated plateau: the corrected bins are unusable
            level = float(smooth[peak])
        threshold = base[a] + fraction * (level - base[a])
        # Scan forward from the run start, which lies in the baseline; a
        # backward walk from deep inside a saturated plateau would stop at
        # the dead-time dips.
        above = np.flatnonzero((trace.corrected[a:b] >= threshold) & trace.valid[a:b])
        start = a + int(above[0]) if len(above) else peak
        try:
            pos = leading_edge_position(
                trace,
                start,
                fraction,
                baseline=float(base[a]),
                peak_level=level,
                group_index=log_trace.group_index,
                search_bins=max(4 * w, 8),
            )
        except ValueError:
            pos = float(z[a])
        events.append(DetectedEvent(pos, REFLECTIVE, magnitude))
        reflective_zone[max(0, a - w - 2) : min(n, b + w + 2)] = True

    events.extend(
        _lossy_steps(log_trace, reflective_zone, loss_in, pulse_bins, loss_threshold, significance)
    )
    events.sort(key=lambda e: e.position)
    return events


def _lossy_steps(log_trace, reflective_zone, in_region, pulse_bins, threshold, significance):
    y = log_trace.values
    good = log_trace.finite & ~reflective_zone & in_region
    n = len(y)
    width = max(10 * pulse_bins, 100)
    guard = pulse_bins
    x = log_trace.distance / 1e3
    x0 = x[0] if n else 0.0
    xs = np.where(good, x - x0, 0.0)
    ys = np.where(good, y, 0.0)

    def prefix(v):
        return np.concatenate([[0.0], np.cumsum(v)])

    P = [
        prefix(good.astype(float)),
        prefix(xs),
        prefix(ys),
        prefix(xs * xs),
        prefix(xs * ys),
        prefix(ys * ys),
    ]
    i = np.arange(n)

    def line_at(a, b):
        a = np.clip(a, 0, n)
        b = np.clip(b, 0, n)
        cnt, sx, sy, sxx, sxy, syy = (p[b] - p[a] for p in P)
        with np.errstate(invalid="ignore", divide="ignore"):
            den = cnt * sxx - sx * sx
            slope = (cnt * sxy - sx * sy) / den
            icpt = (sy - slope * sx) / cnt
            at = icpt + slope * (x - x0)
            # variance of the fitted value at x
            resid = np.maximum(syy - icpt * sy - slope * sxy, 0.0) / np.maximum(cnt - 2, 1)
            var = resid * (1.0 / cnt + cnt * ((x - x0) - sx / cnt) ** 2 / den)
        enough = (cnt >= 10) & (cnt >= 0.5 * (width - guard)) & (den > 0)
        return np.where(enough, at, np.nan), np.where(enough, var, np.nan)

    left, var_l = line_at(i - width, i - guard)
    right, var_r = line_at(i + guard, i + width)
    step = left - right
    with np.errstate(invalid="ignore"):
        strong = step > significance * np.sqrt(var_l + var_r)
    cand = (np.nan_to_num(step, nan=-np.inf) > threshold) & strong
    near_reflection = np.convolve(reflective_zone, np.ones(2 * width + 1), mode="same") > 0
    cand &= in_region & ~near_reflection

    found = []
    for a, b in _runs(cand):
        if found and a - found[-1][1] < width:
            if np.nanmax(step[a:b]) > np.nanmax(step[found[-1][0] : found[-1][1]]):
                found[-1] = (a, b)
            continue
        found.append((a, b))

    events = []
    for a, b in found:
        seg = step[a:b]
        top = float(np.nanmax(seg))
        plateau = np.flatnonzero(seg >= 0.8 * top)
        centre = a + int(round(0.5 * (plateau[0] + plateau[-1])))
        events.append(
            DetectedEvent(float(log_trace.distance[centre]), LOSSY, float(np.median(seg[plateau])))
        )
    return events


def reflective_exclusion(log_trace: LogTrace, events, pulse_width: float) -> np.ndarray:
    """Bins covered by reflective events (edge to one pulse length later)."""
    z = log_trace.distance
    dz = SPEED_OF_LIGHT * log_trace.trace.bin_width / (2.0 * log_trace.group_index)
    length = SPEED_OF_LIGHT * pulse_width / (2.0 * log_trace.group_index)
    mask = np.zeros(len(z), bool)
    for e in events:
        if e.kind == REFLECTIVE:
            mask |= (z >= e.position - 10 * dz) & (z <= e.position + length + 10 * dz)
    return mask


def analyze(
    trace: Trace,
    *,
    fiber_length: float,
    pulse_width: float,
    group_index: float = DEFAULT_GROUP_INDEX,
    fit_region: tuple[float, float] | None = None,
    tail_region: tuple[float, float] | None = None,
    reflect_threshold: float = 3.0,
    loss_threshold: float = 0.3,
    n0_strategy="first",
) -> tuple[LogTrace, AnalysisReport]:
    """Run the log conversion, event detection, fit and noise estimate on a
    dead-time-corrected (and possibly stitched) trace."""
    log_trace = to_log_trace(trace, n0_strategy, group_index)
    pulse_len = SPEED_OF_LIGHT * pulse_width / (2.0 * group_index)
    z_end = float(log_trace.distance[-1]) if len(log_trace.distance) else 0.0
    if fit_region is None:
        fit_region = (2.0 * pulse_len, fiber_length - 2.0 * pulse_len)
    if tail_region is None:
        tail_region = (fiber_length + 3.0 * pulse_len, z_end)
    events = detect_events(
        log_trace,
        reflect_threshold,
        loss_threshold,
        pulse_width=pulse_width,
        region=(0.0, fiber_length + 2.0 * pulse_len),
        loss_region=(0.0, fiber_length - pulse_len),
    )
    exclude = reflective_exclusion(log_trace, events, pulse_width)
    slope, intercept = fit_attenuation(log_trace, fit_region, exclude)
    rms = rms_noise_level(log_trace, tail_region)
    report = AnalysisReport(
        slope=slope,
        intercept=intercept,
        rms_noise=rms,
        events=tuple(events),
        n0=log_trace.n0,
        initial_level=0.0,
        fit_region=tuple(float(v) for v in fit_region),
        tail_region=tuple(float(v) for v in tail_region),
    )
    return log_trace, report

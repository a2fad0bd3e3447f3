"""Fiber plan, acquisition hardware and the closed-form link budget.

Everything here is a pure function of its inputs. Internal units are SI
(meters, seconds, watts); attenuation is carried in dB/km because that is
how every datasheet quotes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact
PLANCK = 6.62607015e-34  # J s, exact

DEFAULT_GROUP_INDEX = 1.468
DEFAULT_BACKSCATTER_DB = -52.0
BACKSCATTER_REFERENCE_PULSE = 1e-6  # s
DEFAULT_END_REFLECTANCE_DB = -14.7


class DomainError(ValueError):
    """An argument lies outside the domain of a closed-form operation."""


class ConfigurationError(ValueError):
    """A hardware or fiber configuration violates one of its invariants."""


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 1e-3 * 10.0 ** (dbm / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts < 0:
        raise DomainError(f"power must be >= 0 W, got {watts}")
    return 10.0 * math.log10(watts / 1e-3) if watts > 0 else -math.inf


@dataclass(frozen=True)
class FiberSegment:
    length: float
    attenuation: float = 0.2
    backscatter_level: float = DEFAULT_BACKSCATTER_DB
    group_index: float = DEFAULT_GROUP_INDEX

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigurationError(f"segment length must be > 0, got {self.length}")
        if not self.attenuation >= 0:
            raise ConfigurationError(
                f"segment attenuation must be >= 0 dB/km, got {self.attenuation}"
            )
        if not 1.0 < self.group_index < 2.0:
            raise ConfigurationError(
                f"group_index must lie in (1, 2), got {self.group_index}"
            )


@dataclass(frozen=True)
class PointEvent:
    """A splice, connector or reflector at a fixed position.

    ``insertion_loss`` is one-way. ``reflectance`` is ``-inf`` for a purely
    lossy splice.
    """

    position: float
    insertion_loss: float = 0.0
    reflectance: float = -math.inf

    def __post_init__(self):
        if not self.insertion_loss >= 0:
            raise ConfigurationError(
                f"insertion_loss must be >= 0 dB, got {self.insertion_loss}"
            )
        if self.reflectance > 0:
            raise ConfigurationError(
                f"reflectance must be <= 0 dB, got {self.reflectance}"
            )


@dataclass(frozen=True)
class FiberPlan:
    """Ordered fiber segments plus discrete events along them.

    Segments tile ``[0, length]`` back to back, so only their lengths are
    stored. The far end of the last segment reflects with
    ``end_reflectance``.
    """

    segments: tuple[FiberSegment, ...]
    events: tuple[PointEvent, ...] = ()
    end_reflectance: float = DEFAULT_END_REFLECTANCE_DB

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "events", tuple(self.events))
        if not self.segments:
            raise ConfigurationError("a fiber plan needs at least one segment")
        if self.end_reflectance > 0:
            raise ConfigurationError(
                f"end_reflectance must be <= 0 dB, got {self.end_reflectance}"
            )
        positions = [e.position for e in self.events]
        if positions != sorted(positions):
            raise ConfigurationError("events must be sorted by position")
        total = self.length
        for e in self.events:
            if not 0 <= e.position <= total:
                raise ConfigurationError(
                    f"event at {e.position} m lies outside the plan [0, {total}] m"
                )

    @classmethod
    def uniform(cls, length: float, attenuation: float = 0.2, **kwargs) -> "FiberPlan":
        seg_keys = {"backscatter_level", "group_index"}
        seg_kwargs = {k: kwargs.pop(k) for k in list(kwargs) if k in seg_keys}
        return cls((FiberSegment(length, attenuation, **seg_kwargs),), **kwargs)

    @property
    def length(self) -> float:
        return float(sum(s.length for s in self.segments))

    def boundaries(self) -> np.ndarray:
        """Segment start positions followed by the total length."""
        return np.concatenate([[0.0], np.cumsum([s.length for s in self.segments])])

    def delay_boundaries(self) -> np.ndarray:
        """Round-trip delay at each entry of :meth:`boundaries`."""
        rt = [round_trip_time(s.length, s.group_index) for s in self.segments]
        return np.concatenate([[0.0], np.cumsum(rt)])

    @property
    def round_trip(self) -> float:
        return float(self.delay_boundaries()[-1])

    def position_at(self, t):
        """Map round-trip delay to position; delays past the end extrapolate
        with the last segment's group index."""
        t = np.asarray(t, dtype=float)
        tb = self.delay_boundaries()
        zb = self.boundaries()
        n = np.array([s.group_index for s in self.segments])
        k = np.clip(np.searchsorted(tb, t, side="right") - 1, 0, len(n) - 1)
        return zb[k] + (t - tb[k]) * SPEED_OF_LIGHT / (2.0 * n[k])

    def delay_at(self, z):
        z = np.asarray(z, dtype=float)
        tb = self.delay_boundaries()
        zb = self.boundaries()
        n = np.array([s.group_index for s in self.segments])
        k = np.clip(np.searchsorted(zb, z, side="right") - 1, 0, len(n) - 1)
        return tb[k] + (z - zb[k]) * 2.0 * n[k] / SPEED_OF_LIGHT

    def one_way_loss(self, z):
        """Cumulative one-way loss in dB from launch to ``z``.

        Includes insertion losses of events strictly before ``z``.
        """
        z = np.asarray(z, dtype=float)
        zb = self.boundaries()
        alpha = np.array([s.attenuation for s in self.segments]) / 1e3
        seg_loss = np.concatenate([[0.0], np.cumsum(alpha * np.diff(zb))])
        k = np.clip(np.searchsorted(zb, z, side="right") - 1, 0, len(alpha) - 1)
        zc = np.clip(z, 0.0, zb[-1])
        loss = seg_loss[k] + alpha[k] * (zc - zb[k])
        if self.events:
            ev_pos = np.array([e.position for e in self.events])
            cum_il = np.concatenate([[0.0], np.cumsum([e.insertion_loss for e in self.events])])
            loss = loss + cum_il[np.searchsorted(ev_pos, z, side="left")]
        return loss

    def with_crosstalk(self, reflectance: float) -> "FiberPlan":
        """Add the circulator crosstalk / Fresnel peak as a reflector at z = 0."""
        return FiberPlan(
            self.segments,
            (PointEvent(0.0, 0.0, reflectance),) + self.events,
            self.end_reflectance,
        )


@dataclass(frozen=True)
class LaserConfig:
    wavelength: float = 1549.87e-9
    peak_power: float = 23.0  # dBm
    pulse_width: float = 1e-6
    repetition_rate: float = 400.0
    extinction_ratio: float = math.inf  # dB

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ConfigurationError(f"wavelength must be > 0, got {self.wavelength}")
        if not self.pulse_width > 0:
            raise ConfigurationError(f"pulse_width must be > 0, got {self.pulse_width}")
        if not self.repetition_rate > 0:
            raise ConfigurationError(
                f"repetition_rate must be > 0, got {self.repetition_rate}"
            )
        if not self.pulse_width * self.repetition_rate < 1:
            raise ConfigurationError(
                "pulse_width * repetition_rate must be < 1 "
                f"(got {self.pulse_width * self.repetition_rate:g})"
            )
        if not self.extinction_ratio >= 0:
            raise ConfigurationError(
                f"extinction_ratio must be >= 0 dB, got {self.extinction_ratio}"
            )

    @property
    def period(self) -> float:
        return 1.0 / self.repetition_rate

    @property
    def photon_energy(self) -> float:
        return PLANCK * SPEED_OF_LIGHT / self.wavelength

    def check_against(self, plan: FiberPlan) -> None:
        """Raise if successive pulses would overlap in the fiber."""
        bound = 1.0 / plan.round_trip
        if self.repetition_rate > bound:
            raise ConfigurationError(
                f"repetition_rate {self.repetition_rate:g} Hz exceeds "
                f"max_repetition_rate {bound:.6g} Hz for a {plan.length:g} m plan"
            )


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.15
    dark_rate: float = 80.0
    dead_time: float = 60e-9
    jitter_sigma: float = 500e-12
    polarization_visibility: float = 0.9
    polarization_correlation_length: float = 5000.0
    paralyzable: bool = False
    # 0 keeps one polarization track for the whole acquisition
    polarization_resample_every: int = 0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ConfigurationError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not self.dark_rate >= 0:
            raise ConfigurationError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if not self.dead_time >= 0:
            raise ConfigurationError(f"dead_time must be >= 0, got {self.dead_time}")
        if not self.jitter_sigma >= 0:
            raise ConfigurationError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        if not 0 <= self.polarization_visibility <= 1:
            raise ConfigurationError(
                "polarization_visibility must lie in [0, 1], "
                f"got {self.polarization_visibility}"
            )
        if not self.polarization_correlation_length > 0:
            raise ConfigurationError("polarization_correlation_length must be > 0")
        if self.polarization_resample_every < 0:
            raise ConfigurationError("polarization_resample_every must be >= 0")


@dataclass(frozen=True)
class GateSchedule:
    """Intervals ``[off_start, off_end)`` within a pulse period during which
    the detector is switched off."""

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        prev_end = -math.inf
        for a, b in ivs:
            if not a < b:
                raise ConfigurationError(f"gate interval ({a}, {b}) is empty or reversed")
            if a < prev_end:
                raise ConfigurationError("gate intervals must be sorted and disjoint")
            if a < 0:
                raise ConfigurationError("gate intervals must start at or after 0")
            prev_end = b

    def check_period(self, period: float) -> None:
        if self.intervals and self.intervals[-1][1] > period:
            raise ConfigurationError(
                f"gate interval ends at {self.intervals[-1][1]:g} s, "
                f"beyond the pulse period {period:g} s"
            )

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.intervals:
            return np.empty(0), np.empty(0)
        a = np.array(self.intervals, dtype=float)
        return a[:, 0], a[:, 1]


def round_trip_time(length: float, group_index: float = DEFAULT_GROUP_INDEX) -> float:
    if length < 0:
        raise DomainError(f"length must be >= 0, got {length}")
    return 2.0 * length * group_index / SPEED_OF_LIGHT


def max_repetition_rate(length: float, group_index: float = DEFAULT_GROUP_INDEX) -> float:
    if length <= 0:
        raise DomainError("length must be > 0; a zero-length fiber has no rate bound")
    return 1.0 / round_trip_time(length, group_index)


def compute_nep(dark_rate: float, efficiency: float, wavelength: float) -> tuple[float, float]:
    """Noise-equivalent power of a photon counter.

    Returns
    -------
    (nep_w, nep_dbm)
        In W/sqrt(Hz) and dBm/sqrt(Hz). A dark-count-free detector gives
        ``(0.0, -inf)``.
    """
    if efficiency <= 0:
        raise DomainError(f"efficiency must be > 0, got {efficiency}")
    if dark_rate < 0:
        raise DomainError(f"dark_rate must be >= 0, got {dark_rate}")
    nep = PLANCK * SPEED_OF_LIGHT / wavelength / efficiency * math.sqrt(2.0 * dark_rate)
    dbm = 10.0 * math.log10(nep / 1e-3) if nep > 0 else -math.inf
    return nep, dbm


def distance_resolution(jitter_sigma: float, group_index: float = DEFAULT_GROUP_INDEX) -> float:
    if jitter_sigma < 0:
        raise DomainError(f"jitter_sigma must be >= 0, got {jitter_sigma}")
    return SPEED_OF_LIGHT * jitter_sigma / (2.0 * group_index)


def two_point_resolution(pulse_width: float, group_index: float = DEFAULT_GROUP_INDEX) -> float:
    if pulse_width <= 0:
        raise DomainError(f"pulse_width must be > 0, got {pulse_width}")
    return SPEED_OF_LIGHT * pulse_width / (2.0 * group_index)


@dataclass(frozen=True)
class _Reflector:
    t_start: float
    power: float  # W returned at the detector input


class LinkBudget:
    """Vectorised expected detection rate for one plan and hardware setup.

    ``rate(t, pol_state)`` is the Poisson intensity (Hz) of detector clicks
    at round-trip delay ``t`` before gating and dead time. ``pol_state`` is
    anything with ``factor(z)`` and ``visibility`` (a polarization track);
    ``None`` gives the polarization-insensitive expectation.
    """

    def __init__(self, plan: FiberPlan, laser: LaserConfig, det: DetectorConfig):
        self.plan = plan
        self.laser = laser
        self.det = det
        self.period = laser.period
        self.p_peak = dbm_to_watts(laser.peak_power)
        self.photon_energy = laser.photon_energy

        self._zb = plan.boundaries()
        self._tb = plan.delay_boundaries()
        self._t_end = float(self._tb[-1])
        pulse_db = 10.0 * math.log10(laser.pulse_width / BACKSCATTER_REFERENCE_PULSE)
        self._bs = np.array(
            [10.0 ** ((s.backscatter_level + pulse_db) / 10.0) for s in plan.segments]
        )
        self._alpha = np.array([s.attenuation for s in plan.segments]) / 1e3

        reflectors = []
        for e in plan.events:
            if math.isfinite(e.reflectance):
                loss = float(plan.one_way_loss(e.position))
                p = self.p_peak * 10.0 ** (e.reflectance / 10.0) * 10.0 ** (-2 * loss / 10.0)
                reflectors.append(_Reflector(float(plan.delay_at(e.position)), p))
        if math.isfinite(plan.end_reflectance):
            loss = float(plan.one_way_loss(plan.length))
            p = self.p_peak * 10.0 ** (plan.end_reflectance / 10.0) * 10.0 ** (-2 * loss / 10.0)
            reflectors.append(_Reflector(self._t_end, p))
        self.reflectors = tuple(reflectors)

        if math.isinf(laser.extinction_ratio):
            self.p_ext = 0.0
        else:
            residual = self.p_peak * 10.0 ** (-laser.extinction_ratio / 10.0)
            self.p_ext = residual * self.integrated_backscatter()

    def integrated_backscatter(self) -> float:
        """Backscattered power fraction for a CW launch of unit power.

        The per-meter backscatter coefficient is the pulse backscatter level
        divided by the pulse's spatial extent, which is independent of the
        pulse width.
        """
        plan = self.plan
        cuts = set(self._zb.tolist())
        cuts.update(e.position for e in plan.events)
        cuts = np.array(sorted(cuts))
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b <= a:
                continue
            k = min(int(np.searchsorted(self._zb, a, side="right")) - 1, len(self._alpha) - 1)
            seg = plan.segments[k]
            per_m = 10.0 ** (seg.backscatter_level / 10.0) / (
                SPEED_OF_LIGHT * BACKSCATTER_REFERENCE_PULSE / (2.0 * seg.group_index)
            )
            # loss just after a, i.e. including an event sitting exactly at a
            loss_a = float(plan.one_way_loss(np.nextafter(a, b)))
            two_way_per_m = 2.0 * self._alpha[k] * math.log(10.0) / 10.0
            length = b - a
            if two_way_per_m > 0:
                integral = -math.expm1(-two_way_per_m * length) / two_way_per_m
            else:
                integral = length
            total += per_m * 10.0 ** (-2 * loss_a / 10.0) * integral
        return total

    def optical_power(self, t) -> np.ndarray:
        """Unpolarized optical power (W) returning at delay ``t``."""
        t = np.asarray(t, dtype=float)
        z = self.plan.position_at(t)
        k = np.clip(np.searchsorted(self._tb, t, side="right") - 1, 0, len(self._bs) - 1)
        inside = (t >= 0) & (t < self._t_end)
        loss = self.plan.one_way_loss(z)
        power = np.where(inside, self.p_peak * self._bs[k] * np.power(10.0, -0.2 * loss), 0.0)
        tau = self.laser.pulse_width
        for r in self.reflectors:
            power = power + np.where((t >= r.t_start) & (t < r.t_start + tau), r.power, 0.0)
        return power + self.p_ext

    def rate(self, t, pol_state=None) -> np.ndarray:
        power = self.optical_power(t)
        if pol_state is not None:
            z = np.minimum(self.plan.position_at(t), self.plan.length)
            power = power * pol_state.factor(z)
        return self.det.efficiency * power / self.photon_energy + self.det.dark_rate

    def envelope(self, visibility: float | None = None, max_step_db: float = 0.2):
        """Piecewise-constant upper bound of :meth:`rate` over one period.

        Returns ``(edges, bounds)`` with ``bounds[j]`` dominating the rate
        on ``[edges[j], edges[j+1])`` for any polarization track of the given
        visibility (``None`` means no polarization factor). Pieces inside
        the fiber are short enough that the two-way loss across each stays
        under ``max_step_db``, keeping the thinning acceptance high.
        """
        period = self.period
        tau = self.laser.pulse_width
        cuts = {0.0, period}
        cuts.update(float(x) for x in self._tb)
        cuts.update(float(x) for x in self.plan.delay_at([e.position for e in self.plan.events]))
        for r in self.reflectors:
            cuts.update((r.t_start, r.t_start + tau))
        cuts = np.array(sorted(c for c in cuts if 0.0 <= c <= period))

        edges = [cuts[0]]
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b <= a:
                continue
            if a < self._t_end:
                k = min(int(np.searchsorted(self._tb, a, side="right")) - 1, len(self._alpha) - 1)
                dz = (b - a) * SPEED_OF_LIGHT / (2.0 * self.plan.segments[k].group_index)
                n_sub = max(1, math.ceil(2e3 * self._alpha[k] * dz / 1e3 / max_step_db))
                edges.extend(np.linspace(a, b, n_sub + 1)[1:])
            else:
                edges.append(b)
        edges = np.array(edges)
        a = edges[:-1]
        nudge = a + (edges[1:] - a) * 1e-9
        optical = np.maximum(self.optical_power(a), self.optical_power(nudge))
        pol_max = 1.0 if visibility is None else (1.0 + visibility) / 2.0
        bounds = self.det.efficiency * optical * pol_max / self.photon_energy
        bounds = bounds * (1.0 + 1e-9) + self.det.dark_rate
        return edges, bounds


def expected_detection_rate(
    plan: FiberPlan,
    laser: LaserConfig,
    det: DetectorConfig,
    t,
    pol_state=None,
):
    """Expected click rate (Hz) at round-trip delay ``t`` within a period."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr >= laser.period):
        raise DomainError("t must lie in [0, 1/repetition_rate)")
    out = LinkBudget(plan, laser, det).rate(t_arr, pol_state)
    return float(out) if np.ndim(out) == 0 else out


def peak_power_for_rate(
    plan: FiberPlan, laser: LaserConfig, det: DetectorConfig, target_rate: float
) -> float:
    """Peak power (dBm) giving ``target_rate`` clicks/s at the start of the
    trace, ignoring dark counts and polarization."""
    budget = LinkBudget(plan, laser, det)
    optical = float(budget.optical_power(0.0)) - budget.p_ext
    per_watt = det.efficiency * optical / budget.p_peak / budget.photon_energy
    if per_watt <= 0:
        raise DomainError("the trace start returns no light")
    return watts_to_dbm(target_rate / per_watt)


"""Photon-event generation for a pulsed OTDR acquisition.

Each pulse period is an inhomogeneous Poisson process drawn by thinning
against a piecewise-constant envelope, then passed through the detector:
gate, dead time, timing jitter (in that order). Timestamps are integer
picoseconds from the start of their pulse period.

Random numbers come from substreams keyed by ``(seed, block)`` where a block
is a fixed run of ``block_size`` consecutive pulses, so the output does not
depend on how blocks are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .model import (
    ConfigurationError,
    DetectorConfig,
    FiberPlan,
    GateSchedule,
    LaserConfig,
    LinkBudget,
)

PS = 1e12  # picoseconds per second
DEFAULT_BLOCK_SIZE = 1024

_STREAM_PULSES = 0
_STREAM_POLARIZATION = 1


@dataclass(frozen=True, eq=False)
class PolarizationTrack:
    """Random-walk polarization phase along the fiber.

    The phase is sampled every ``step`` meters (a tenth of the correlation
    length) and linearly interpolated; the detection factor is
    ``(1 + visibility * cos(phase)) / 2``.
    """

    visibility: float
    step: float
    phases: np.ndarray

    @classmethod
    def sample(cls, length, visibility, correlation_length, rng) -> "PolarizationTrack":
        step = correlation_length / 10.0
        n = max(2, int(math.ceil(length / step)) + 1)
        # variance 2*step/Lc per step makes <cos(dphi)> decay as exp(-dz/Lc)
        inc = rng.normal(0.0, math.sqrt(2.0 * step / correlation_length), n - 1)
        phases = rng.uniform(0.0, 2.0 * math.pi) + np.concatenate([[0.0], np.cumsum(inc)])
        return cls(float(visibility), float(step), phases)

    def factor(self, z):
        grid = self.step * np.arange(len(self.phases))
        phi = np.interp(z, grid, self.phases)
        return 0.5 * (1.0 + self.visibility * np.cos(phi))


@dataclass(frozen=True, eq=False)
class PhotonEventStream:
    """Time-tagged detections, sorted by ``(pulse_index, timestamp)``.

    ``timestamp`` is in integer picoseconds within the pulse period.
    ``metadata`` carries the run configuration snapshot (a JSON-able dict).
    """

    pulse_index: np.ndarray
    timestamp: np.ndarray
    n_pulses: int
    period_ps: int
    seed: int | None = None
    gate: GateSchedule = field(default_factory=GateSchedule)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pulse = np.ascontiguousarray(self.pulse_index, dtype=np.int64)
        ts = np.ascontiguousarray(self.timestamp, dtype=np.int64)
        if pulse.shape != ts.shape or pulse.ndim != 1:
            raise ValueError("pulse_index and timestamp must be 1-D arrays of equal length")
        pulse.flags.writeable = False
        ts.flags.writeable = False
        object.__setattr__(self, "pulse_index", pulse)
        object.__setattr__(self, "timestamp", ts)
        object.__setattr__(self, "n_pulses", int(self.n_pulses))
        object.__setattr__(self, "period_ps", int(self.period_ps))

    def __len__(self) -> int:
        return len(self.timestamp)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhotonEventStream):
            return NotImplemented
        return (
            self.n_pulses == other.n_pulses
            and self.period_ps == other.period_ps
            and self.seed == other.seed
            and self.gate == other.gate
            and self.metadata == other.metadata
            and np.array_equal(self.pulse_index, other.pulse_index)
            and np.array_equal(self.timestamp, other.timestamp)
        )

    @property
    def period(self) -> float:
        return self.period_ps / PS

    @property
    def duration(self) -> float:
        return self.n_pulses * self.period

    def is_sorted(self) -> bool:
        p, t = self.pulse_index, self.timestamp
        if len(p) < 2:
            return True
        dp = np.diff(p)
        return bool(np.all((dp > 0) | ((dp == 0) & (np.diff(t) >= 0))))


def _gate_keep(values, starts, ends) -> np.ndarray:
    """True where ``values`` fall outside every ``[start, end)`` interval."""
    values = np.asarray(values)
    if len(starts) == 0:
        return np.ones(values.shape, dtype=bool)
    k = np.searchsorted(starts, values, side="right") - 1
    inside = (k >= 0) & (values < np.asarray(ends)[np.maximum(k, 0)])
    return ~inside


def sample_inhomogeneous_poisson(
    rate_fn: Callable, t_start: float, t_end: float, rate_upper_bound: float, rng
) -> np.ndarray:
    """Sorted event times of a Poisson process with intensity ``rate_fn``.

    Candidates are drawn at ``rate_upper_bound`` and each is kept with
    probability ``rate_fn(t) / rate_upper_bound``. ``rate_fn`` is called once
    with the array of candidate times.

    Raises
    ------
    ValueError
        If the window is reversed, the bound is negative, or ``rate_fn``
        exceeds the bound (or is negative) at any candidate.
    """
    span = t_end - t_start
    if span < 0:
        raise ValueError("t_end must not precede t_start")
    if rate_upper_bound < 0:
        raise ValueError("rate_upper_bound must be >= 0")
    n = rng.poisson(rate_upper_bound * span)
    t = t_start + rng.random(n) * span
    u = rng.random(n)
    rate = np.broadcast_to(np.asarray(rate_fn(t), dtype=float), t.shape)
    if np.any(rate > rate_upper_bound) or np.any(rate < 0):
        raise ValueError("rate_fn leaves [0, rate_upper_bound]; thinning would be biased")
    return np.sort(t[u * rate_upper_bound < rate])


def apply_dead_time(timestamps, dead_time: float, paralyzable: bool = False) -> np.ndarray:
    """Drop events falling in the dead time of an earlier one.

    Non-paralyzable (default): an event survives iff it comes at least
    ``dead_time`` after the last surviving event. Paralyzable: every arrival
    restarts the dead time.
    """
    t = np.ascontiguousarray(timestamps, dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("timestamps must be sorted ascending")
    groups = np.zeros(len(t), dtype=np.int64)
    return t[kernels.dead_time_mask(t, groups, float(dead_time), bool(paralyzable))]


def apply_gate(timestamps, gate: GateSchedule | Sequence[tuple[float, float]]) -> np.ndarray:
    """Remove events inside any ``[off_start, off_end)`` interval."""
    if not isinstance(gate, GateSchedule):
        gate = GateSchedule(tuple(gate))
    t = np.asarray(timestamps, dtype=float)
    starts, ends = gate.arrays()
    return t[_gate_keep(t, starts, ends)]


def apply_jitter(timestamps, jitter_sigma: float, rng, period: float | None = None) -> np.ndarray:
    """Add zero-mean Gaussian timing noise, clamp into ``[0, period)`` and re-sort."""
    if jitter_sigma < 0:
        raise ValueError("jitter_sigma must be >= 0")
    t = np.asarray(timestamps, dtype=float)
    if jitter_sigma == 0:
        return t.copy()
    t = t + rng.normal(0.0, jitter_sigma, len(t))
    if period is not None:
        t = np.clip(t, 0.0, np.nextafter(period, 0.0))
    return np.sort(t)


MAX_CANDIDATES_PER_PULSE = 1e4


def gated_envelope(edges, bounds, gate: GateSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Split the envelope at gate boundaries and zero it where the detector is off."""
    edges = np.asarray(edges, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    starts, ends = gate.arrays()
    if len(starts) == 0:
        return edges, bounds
    cuts = np.concatenate([starts, ends])
    cuts = cuts[(cuts > edges[0]) & (cuts < edges[-1])]
    new_edges = np.union1d(edges, cuts)
    mids = 0.5 * (new_edges[:-1] + new_edges[1:])
    new_bounds = bounds[np.searchsorted(edges, mids, side="right") - 1]
    new_bounds[~_gate_keep(mids, starts, ends)] = 0.0
    return new_edges, new_bounds


class _Engine:
    """Block-wise acquisition shared by plan-based and ad-hoc rate models."""

    def __init__(self, rate_for, edges, bounds, period, det, gate, n_pulses, seed, block_size):
        self.rate_for = rate_for  # track id -> vectorised rate function
        self.edges = np.asarray(edges, dtype=float)
        self.bounds = np.asarray(bounds, dtype=float)
        self.widths = np.diff(self.edges)
        self.lam = self.bounds * self.widths
        expected = float(self.lam.sum())
        if expected > MAX_CANDIDATES_PER_PULSE:
            raise ConfigurationError(
                f"about {expected:.3g} photon arrivals per pulse reach the detector "
                f"(limit {MAX_CANDIDATES_PER_PULSE:g}); lower the peak power or gate the "
                "saturating region"
            )
        self.period_ps = int(round(period * PS))
        self.det = det
        starts, ends = gate.arrays()
        self.gate_starts = np.round(starts * PS).astype(np.int64)
        self.gate_ends = np.round(ends * PS).astype(np.int64)
        self.n_pulses = n_pulses
        self.seed = seed
        self.block_size = block_size
        self.resample = det.polarization_resample_every

    def block(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        first = b * self.block_size
        count = min(self.block_size, self.n_pulses - first)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(_STREAM_PULSES, b)))
        n_iv = len(self.lam)
        counts = rng.poisson(self.lam, size=(count, n_iv))
        per_pulse = counts.sum(axis=1)
        total = int(per_pulse.sum())
        local = np.repeat(np.arange(count, dtype=np.int64), per_pulse)
        iv = np.repeat(np.tile(np.arange(n_iv), count), counts.ravel())
        t = self.edges[iv] + rng.random(total) * self.widths[iv]
        u = rng.random(total)
        sigma = self.det.jitter_sigma
        jit = rng.standard_normal(total) if sigma > 0 else None

        pulse = local + first
        rate = np.empty(total)
        if self.resample:
            track_ids = pulse // self.resample
            for tid in np.unique(track_ids):
                sel = track_ids == tid
                rate[sel] = self.rate_for(int(tid))(t[sel])
        else:
            rate[:] = self.rate_for(0)(t)
        if np.any(rate > self.bounds[iv]):
            raise RuntimeError("expected rate exceeds the thinning envelope")
        keep = u * self.bounds[iv] < rate

        ts = np.minimum(np.floor(t[keep] * PS).astype(np.int64), self.period_ps - 1)
        local = local[keep]
        if jit is not None:
            jit = jit[keep]
        order = np.argsort(local * self.period_ps + ts, kind="stable")
        ts, local = ts[order], local[order]
        if jit is not None:
            jit = jit[order]

        alive = _gate_keep(ts, self.gate_starts, self.gate_ends)
        ts, local = ts[alive], local[alive]
        if jit is not None:
            jit = jit[alive]

        alive = kernels.dead_time_mask(ts, local, self.det.dead_time * PS, self.det.paralyzable)
        ts, local = ts[alive], local[alive]

        if jit is not None:
            jit = jit[alive]
            ts = ts + np.rint(jit * sigma * PS).astype(np.int64)
            np.clip(ts, 0, self.period_ps - 1, out=ts)
            order = np.argsort(local * self.period_ps + ts, kind="stable")
            ts, local = ts[order], local[order]
        return local + first, ts

    def run(self, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        n_blocks = -(-self.n_pulses // self.block_size)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(self.block, range(n_blocks)))
        else:
            parts = [self.block(b) for b in range(n_blocks)]
        if not parts:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _check_run(n_pulses, seed, block_size):
    if n_pulses < 1:
        raise ConfigurationError(f"n_pulses must be >= 1, got {n_pulses}")
    if seed is None or seed < 0:
        raise ConfigurationError("seed must be a non-negative integer")
    if block_size < 1:
        raise ConfigurationError("block_size must be >= 1")


def polarization_track(plan: FiberPlan, det: DetectorConfig, seed: int, index: int = 0):
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_STREAM_POLARIZATION, index))
    )
    return PolarizationTrack.sample(
        plan.length, det.polarization_visibility, det.polarization_correlation_length, rng
    )


def simulate_acquisition(
    plan: FiberPlan,
    laser: LaserConfig,
    det: DetectorConfig,
    gate: GateSchedule | None = None,
    n_pulses: int = 1,
    seed: int = 0,
    *,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    metadata: dict | None = None,
) -> PhotonEventStream:
    """Simulate ``n_pulses`` launches into ``plan`` and return the detections.

    A single polarization track is drawn per acquisition unless
    ``det.polarization_resample_every`` is set, in which case a fresh track
    is used for every run of that many pulses.

    Raises
    ------
    ConfigurationError
        If the repetition rate exceeds the plan's bound, the gate leaves the
        period, or the run parameters are invalid.
    """
    gate = gate if gate is not None else GateSchedule()
    laser.check_against(plan)
    gate.check_period(laser.period)
    _check_run(n_pulses, seed, block_size)

    budget = LinkBudget(plan, laser, det)
    edges, bounds = gated_envelope(*budget.envelope(det.polarization_visibility), gate)
    cache: dict[int, PolarizationTrack] = {}

    def rate_for(tid: int):
        track = cache.get(tid)
        if track is None:
            track = cache.setdefault(tid, polarization_track(plan, det, seed, tid))
        return lambda t: budget.rate(t, track)

    engine = _Engine(rate_for, edges, bounds, laser.period, det, gate, n_pulses, seed, block_size)
    pulse, ts = engine.run(workers)
    return PhotonEventStream(
        pulse, ts, n_pulses, engine.period_ps, seed, gate, dict(metadata or {})
    )


def simulate_process(
    rate_fn: Callable,
    rate_upper_bound: float,
    period: float,
    det: DetectorConfig,
    n_pulses: int,
    seed: int,
    gate: GateSchedule | None = None,
    *,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> PhotonEventStream:
    """Run an arbitrary click-rate model through the same detector chain.

    ``rate_fn(t)`` is vectorised over delays in ``[0, period)`` and must stay
    below ``rate_upper_bound``. Polarization is not applied.
    """
    gate = gate if gate is not None else GateSchedule()
    gate.check_period(period)
    _check_run(n_pulses, seed, block_size)
    engine = _Engine(
        lambda tid: rate_fn,
        *gated_envelope([0.0, period], [rate_upper_bound], gate),
        period,
        DetectorConfig(
            efficiency=det.efficiency,
            dark_rate=det.dark_rate,
            dead_time=det.dead_time,
            jitter_sigma=det.jitter_sigma,
            paralyzable=det.paralyzable,
        ),
        gate,
        n_pulses,
        seed,
        block_size,
    )
    pulse, ts = engine.run(workers)
    return PhotonEventStream(pulse, ts, n_pulses, engine.period_ps, seed, gate)

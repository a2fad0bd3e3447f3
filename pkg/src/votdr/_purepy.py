"""Interpreter fallback for the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import numpy as np


def dead_time_mask(times, groups, dead_time, paralyzable=False):
    times = np.asarray(times)
    groups = np.asarray(groups, dtype=np.int64)
    n = len(times)
    if len(groups) != n:
        raise ValueError("times and groups must have the same length")
    if n == 0:
        return np.zeros(0, dtype=bool)
    tf = times.astype(float)
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = groups[1:] != groups[:-1]
    gap = np.full(n, np.inf)
    gap[1:] = tf[1:] - tf[:-1]
    gap[new_group] = np.inf
    if paralyzable:
        # every arrival restarts the dead time, so only the previous arrival matters
        return gap >= dead_time

    # Events more than a dead time after their predecessor are always kept,
    # whatever happened earlier; only the runs in between need the loop.
    keep = gap >= dead_time
    close = np.flatnonzero(~keep)
    if close.size == 0:
        return keep
    tl = tf.tolist()
    i = 0
    while i < close.size:
        start = close[i] - 1  # the run's head is kept
        j = i
        while j + 1 < close.size and close[j + 1] == close[j] + 1:
            j += 1
        last = tl[start]
        for k in range(close[i], close[j] + 1):
            if tl[k] - last >= dead_time:
                keep[k] = True
                last = tl[k]
        i = j + 1
    return keep


def histogram(timestamps, bin_width, n_bins):
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    ts = np.asarray(timestamps, dtype=np.int64)
    k = ts[ts >= 0] // bin_width
    return np.bincount(k[k < n_bins], minlength=n_bins).astype(np.int64)

# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled inner loops. Keep signatures identical to ``_purepy``."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused time_t:
    cnp.int64_t
    double


def dead_time_mask(const time_t[::1] times, const cnp.int64_t[::1] groups,
                   double dead_time, bint paralyzable=False):
    """Boolean keep-mask for a detector with the given dead time.

    ``times`` must be sorted within each run of equal ``groups``; the
    detector is re-armed whenever the group changes.
    """
    cdef Py_ssize_t n = times.shape[0]
    if groups.shape[0] != n:
        raise ValueError("times and groups must have the same length")
    out = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] keep = out
    cdef Py_ssize_t i
    cdef double last = 0.0
    cdef cnp.int64_t group = 0
    cdef bint armed = False
    with nogil:
        for i in range(n):
            if not armed or groups[i] != group:
                group = groups[i]
                keep[i] = 1
                last = <double>times[i]
                armed = True
            elif <double>times[i] - last >= dead_time:
                keep[i] = 1
                last = <double>times[i]
            elif paralyzable:
                last = <double>times[i]
    return out.view(np.bool_)


def histogram(const cnp.int64_t[::1] timestamps, cnp.int64_t bin_width, Py_ssize_t n_bins):
    """Counts of ``timestamps // bin_width`` over ``[0, n_bins)``; values
    outside the range are dropped."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    out = np.zeros(n_bins, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = out
    cdef Py_ssize_t i, k
    cdef cnp.int64_t t
    with nogil:
        for i in range(timestamps.shape[0]):
            t = timestamps[i]
            if t < 0:
                continue
            k = <Py_ssize_t>(t // bin_width)
            if k < n_bins:
                counts[k] += 1
    return out

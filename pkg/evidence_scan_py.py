#!/usr/bin/env python3
"""
Pure-Python fallback for evidence_scan
Same arithmetic and tie-breaking as the Cython module
"""

import numpy as np


def _prefix(e):
    prefix = np.zeros((e.shape[0] + 1, e.shape[1]))
    np.cumsum(e, axis=0, out=prefix[1:])
    return prefix


def window_margins(e, w):
    """For every window end t, best-minus-second-best of the windowed sums.

    The window covering end t is [max(0, t - w), t]. Ends before the first
    full window (t < w) are not evaluated and get -inf, except when the
    whole series is shorter than one window, in which case only the last
    end is evaluated. A single candidate always yields +inf.
    """
    e = np.ascontiguousarray(e, dtype=np.float64)
    T, K = e.shape
    margins = np.full(T, -np.inf)
    best = np.full(T, -1, dtype=np.int64)
    if T == 0 or K == 0:
        return margins, best

    prefix = _prefix(e)
    first = min(w, T - 1)
    ends = np.arange(first, T)
    starts = np.maximum(0, ends - w)
    sums = prefix[ends + 1] - prefix[starts]

    best[first:] = np.argmax(sums, axis=1)
    if K == 1:
        margins[first:] = np.inf
    else:
        top = sums[np.arange(len(ends)), best[first:]]
        masked = sums.copy()
        masked[np.arange(len(ends)), best[first:]] = -np.inf
        margins[first:] = top - masked.max(axis=1)
    return margins, best


def best_split(e, lo, hi):
    """Best single split of the series into prefix [0, s) and suffix [s, T).

    Split points s range over (lo, hi] and are clipped to [1, T - 1]. The gain
    is max prefix sum + max suffix sum - max whole-series sum; the earliest
    split wins ties. Returns (gain, split, left, right) or (-inf, -1, -1, -1)
    when there is no admissible split.
    """
    e = np.ascontiguousarray(e, dtype=np.float64)
    T, K = e.shape
    lo = max(int(lo), 0)
    hi = min(int(hi), T - 1)
    if K == 0 or hi <= lo:
        return -np.inf, -1, -1, -1

    prefix = _prefix(e)
    total = prefix[T]
    splits = np.arange(lo + 1, hi + 1)
    left_sums = prefix[splits]
    right_sums = total - left_sums
    left = np.argmax(left_sums, axis=1)
    right = np.argmax(right_sums, axis=1)
    rows = np.arange(len(splits))
    gains = left_sums[rows, left] + right_sums[rows, right] - total.max()
    i = int(np.argmax(gains))
    return float(gains[i]), int(splits[i]), int(left[i]), int(right[i])

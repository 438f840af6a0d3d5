"""Hot inner loops, each with a numba-compiled and a pure-numpy/python path.

``accumulate_counts`` and ``stop_segments`` dispatch on
:func:`transona._accel.numba_enabled`; the ``*_numba`` / ``*_numpy``
variants stay public so tests and the benchmark can compare them.
"""
import numpy as np

from ._accel import njit, numba_enabled

_BLOCK = 1024


@njit(cache=True, nogil=True)
def _accumulate_jit(times, windows, members, binary):
    n, C = members.shape
    W = np.zeros((C, C), dtype=np.int64)
    if n == 0:
        return W
    maxw = windows.max()
    active = np.zeros(C, dtype=np.int64)
    for j in range(n):
        tj = times[j]
        if binary:
            active[:] = 0
        i = j - 1
        while i >= 0 and tj - times[i] <= maxw:
            lag = tj - times[i]
            if lag > 0 and lag <= windows[i]:
                for a in range(C):
                    if members[i, a]:
                        if binary:
                            active[a] = 1
                        else:
                            for b in range(C):
                                if members[j, b]:
                                    W[a, b] += 1
            i -= 1
        if binary:
            for a in range(C):
                if active[a]:
                    for b in range(C):
                        if members[j, b]:
                            W[a, b] += 1
    return W


def accumulate_counts_numba(times, windows, members, binary=False):
    return _accumulate_jit(np.ascontiguousarray(times, dtype=np.int64),
                           np.ascontiguousarray(windows, dtype=np.int64),
                           np.ascontiguousarray(members, dtype=np.uint8), bool(binary))


def accumulate_counts_numpy(times, windows, members, binary=False):
    times = np.asarray(times, dtype=np.int64)
    windows = np.asarray(windows, dtype=np.int64)
    members = np.asarray(members, dtype=np.int64)
    n, C = members.shape
    W = np.zeros((C, C), dtype=np.int64)
    if n == 0:
        return W
    maxw = int(windows.max())
    for j0 in range(0, n, _BLOCK):
        j1 = min(n, j0 + _BLOCK)
        i0 = int(np.searchsorted(times, times[j0] - maxw, side="left"))
        lag = times[None, j0:j1] - times[i0:j1, None]
        qualifies = (lag > 0) & (lag <= windows[i0:j1, None])
        prior = members[i0:j1]
        resp = members[j0:j1]
        if binary:
            reached = (qualifies.T.astype(np.int64) @ prior) > 0
            W += reached.T.astype(np.int64) @ resp
        else:
            W += prior.T @ (qualifies.astype(np.int64) @ resp)
    return W


def accumulate_counts(times, windows, members, binary=False):
    """Directed code-pair counts over time-sorted events.

    ``members[i, a]`` marks event ``i`` carrying code ``a``; event ``i`` can
    connect to a later event ``j`` when ``0 < t_j - t_i <= windows[i]``.
    """
    if numba_enabled():
        return accumulate_counts_numba(times, windows, members, binary)
    return accumulate_counts_numpy(times, windows, members, binary)


@njit(cache=True, nogil=True)
def _stops_jit(times, xs, ys, radius, min_duration):
    n = times.shape[0]
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    k = 0
    r2 = radius * radius
    i = 0
    while i < n:
        cx = xs[i]
        cy = ys[i]
        cnt = 1
        j = i + 1
        while j < n:
            dx = xs[j] - cx
            dy = ys[j] - cy
            if dx * dx + dy * dy > r2:
                break
            cnt += 1
            cx += dx / cnt
            cy += dy / cnt
            j += 1
        last = j - 1
        if last > i and times[last] - times[i] >= min_duration:
            starts[k] = i
            ends[k] = last
            k += 1
            i = j
        else:
            i += 1
    return starts[:k], ends[:k]


def stop_segments_numba(times, xs, ys, radius, min_duration):
    return _stops_jit(np.ascontiguousarray(times, dtype=np.int64),
                      np.ascontiguousarray(xs, dtype=np.float64),
                      np.ascontiguousarray(ys, dtype=np.float64),
                      float(radius), np.int64(min_duration))


def stop_segments_numpy(times, xs, ys, radius, min_duration):
    times = np.asarray(times, dtype=np.int64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = len(times)
    r2 = float(radius) ** 2
    starts, ends = [], []
    i = 0
    while i < n:
        cx, cy, cnt = xs[i], ys[i], 1
        j = i + 1
        while j < n:
            dx, dy = xs[j] - cx, ys[j] - cy
            if dx * dx + dy * dy > r2:
                break
            cnt += 1
            cx += dx / cnt
            cy += dy / cnt
            j += 1
        last = j - 1
        if last > i and times[last] - times[i] >= min_duration:
            starts.append(i)
            ends.append(last)
            i = j
        else:
            i += 1
    return np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64)


def stop_segments(times, xs, ys, radius, min_duration):
    """Greedy stay-point segmentation: index pairs ``(start, end)`` of each stop.

    A segment grows while each new sample lies within ``radius`` of the
    running centroid of the samples already in it, and is kept when it spans
    at least ``min_duration`` (same unit as ``times``).
    """
    if numba_enabled():
        return stop_segments_numba(times, xs, ys, radius, min_duration)
    return stop_segments_numpy(times, xs, ys, radius, min_duration)

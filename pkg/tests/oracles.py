"""Independent reference implementations used as test oracles.

Each one is deliberately naive: full enumeration, quadratic loops, or
first-order search, so that agreement with the library is meaningful.
"""
import itertools
import math
from collections import Counter

import numpy as np

from transona.events import EventSource


def brute_accumulate(events, tif, codes, binary=False):
    """Enumerate every ordered event pair."""
    C = len(codes)
    idx = {c: k for k, c in enumerate(codes)}
    W = np.zeros((C, C), dtype=np.int64)
    evs = [e for e in events if any(c in idx for c in e.codes)]
    for j, resp in enumerate(evs):
        reached = set()
        for i, prior in enumerate(evs):
            if i == j:
                continue
            lag = resp.timestamp - prior.timestamp
            if 0 < lag <= tif.window_ms(prior.source):
                for a in prior.codes:
                    if a not in idx:
                        continue
                    if binary:
                        reached.add(a)
                    else:
                        for b in resp.codes:
                            if b in idx:
                                W[idx[a], idx[b]] += 1
        if binary:
            for a in reached:
                for b in resp.codes:
                    if b in idx:
                        W[idx[a], idx[b]] += 1
    return W


def rank_sum_null(n1, n2):
    """Counter of U statistics over all C(n1+n2, n1) labelings of ranks 1..N."""
    N = n1 + n2
    counts = Counter()
    for pos in itertools.combinations(range(1, N + 1), n1):
        counts[sum(pos) - n1 * (n1 + 1) // 2] += 1
    return counts


def signed_rank_null(n):
    counts = Counter()
    for signs in itertools.product((0, 1), repeat=n):
        counts[sum(r for r, s in zip(range(1, n + 1), signs) if s)] += 1
    return counts


def two_sided_p(counts, stat):
    total = sum(counts.values())
    lo = sum(v for k, v in counts.items() if k <= stat) / total
    hi = sum(v for k, v in counts.items() if k >= stat) / total
    return min(1.0, 2 * min(lo, hi))


def logistic_gradient_ascent(X, y, tol=1e-10, max_iter=200_000):
    """Fixed-step gradient ascent on the logistic log-likelihood (with intercept)."""
    A = np.column_stack([np.ones(len(y)), X])
    L = 0.25 * np.linalg.eigvalsh(A.T @ A).max()
    beta = np.zeros(A.shape[1])
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(A @ beta)))
        g = A.T @ (y - p)
        if np.linalg.norm(g) < tol:
            break
        beta += g / L
    return beta


def pattern_search(f, x0, step=0.5, tol=1e-9, max_iter=200_000):
    """Compass search maximizing ``f``; halves the step when no coordinate move helps."""
    x = np.array(x0, dtype=float)
    fx = f(x)
    it = 0
    while step > tol and it < max_iter:
        improved = False
        for k in range(len(x)):
            for sgn in (1.0, -1.0):
                cand = x.copy()
                cand[k] += sgn * step
                fc = f(cand)
                if fc > fx:
                    x, fx, improved = cand, fc, True
                    break
            it += 1
        if not improved:
            step *= 0.5
    return x, fx


def coregister_closed_form(M, S, ridge):
    C = M.shape[1]
    return np.linalg.solve(M.T @ M + ridge * np.eye(C), M.T @ S)


def stops_reference(times, xs, ys, radius, min_duration):
    """Plain-python greedy stay-point scan mirroring the documented rule."""
    out = []
    i, n = 0, len(times)
    while i < n:
        pts = [(xs[i], ys[i])]
        j = i + 1
        while j < n:
            cx = sum(p[0] for p in pts) / len(pts)
            cy = sum(p[1] for p in pts) / len(pts)
            if math.hypot(xs[j] - cx, ys[j] - cy) > radius:
                break
            pts.append((xs[j], ys[j]))
            j += 1
        last = j - 1
        if last > i and times[last] - times[i] >= min_duration:
            out.append((i, last))
            i = j
        else:
            i += 1
    return out


SOURCES = list(EventSource)

"""Independent reference implementations used as test oracles.

Nothing here imports the code paths it checks: edge sets are plain Python
sets of coordinate tuples and every computation is done the slow, obvious way.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def sq(k):
    return sum(int(c) * int(c) for c in k)


def length_gt(k, num, den, norm="euclidean"):
    """Exact ``||k|| > num/den``."""
    if norm == "euclidean":
        return den * den * sq(k) > num * num
    if norm == "sup":
        return den * max(abs(c) for c in k) > num
    return den * sum(abs(c) for c in k) > num


def vertices_of(lo, side):
    return [tuple(lo[i] + h[i] for i in range(len(lo))) for h in itertools.product(range(side), repeat=len(lo))]


def dense_distances(vertices, edges):
    """All-pairs hop distances by boolean matrix powers; -1 = unreachable."""
    index = {v: i for i, v in enumerate(vertices)}
    n = len(vertices)
    adj = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        adj[index[a], index[b]] = adj[index[b], index[a]] = True
    dist = np.full((n, n), -1, dtype=np.int64)
    reach = np.eye(n, dtype=bool)
    dist[reach] = 0
    a_int = adj.astype(np.int64)
    for t in range(1, n):
        new = reach | ((reach.astype(np.int64) @ a_int) > 0)
        fresh = new & ~reach
        if not fresh.any():
            break
        dist[fresh] = t
        reach = new
    return index, dist


def inside(p, corner, side):
    return all(c <= x < c + side for x, c in zip(p, corner))


def ref_side(M, k):
    return M * math.factorial(k) ** 2


def ref_good(edges, level, corner, M, norm="euclidean"):
    """Goodness straight from the recursive definition, no memoization."""
    return _ref_ab(edges, level, corner, M, norm) and (level == 0 or _ref_c(edges, level, corner, M, norm))


def _ref_ab(edges, level, corner, M, norm):
    side = ref_side(M, level)
    thr = ref_side(M, max(level - 1, 0))
    for a, b in edges:
        if inside(a, corner, side) and inside(b, corner, side):
            if length_gt([x - y for x, y in zip(a, b)], thr, 100, norm):
                return False
    if level == 0:
        return True
    child = ref_side(M, level - 1)
    c = level * level
    bad = 0
    for h in itertools.product(range(c), repeat=len(corner)):
        cc = tuple(q + hi * child for q, hi in zip(corner, h))
        if not ref_good(edges, level - 1, cc, M, norm):
            bad += 1
    return bad <= 1


def _ref_c(edges, level, corner, M, norm):
    side = ref_side(M, level)
    touching = {e for e in edges if inside(e[0], corner, side) or inside(e[1], corner, side)}
    step = ref_side(M, level - 1) // 2
    for j in itertools.product((-1, 0, 1), repeat=len(corner)):
        q = tuple(c + ji * step for c, ji in zip(corner, j))
        if not _ref_ab(touching, level, q, M, norm):
            return False
    return True


def check_waypoints(vertices, idx, scale, norm="euclidean"):
    """Both spacing conditions, evaluated with exact integer arithmetic."""
    v = [tuple(int(c) for c in row) for row in np.asarray(vertices).reshape(len(vertices), -1)]
    if not idx or idx[0] != 0 or sorted(set(idx)) != list(idx):
        return False
    bounds = list(idx) + [len(v)]
    for n in range(len(idx)):
        w = v[idx[n]]
        if n + 1 < len(idx):
            nxt = v[idx[n + 1]]
            if not length_gt([a - b for a, b in zip(nxt, w)], scale, 4, norm):
                return False
        for u in v[idx[n]: bounds[n + 1]]:
            # need ||u - w|| < scale/2, i.e. not (||u - w|| >= scale/2)
            k = [a - b for a, b in zip(u, w)]
            if length_gt(k, scale, 2, norm) or _length_eq(k, scale, 2, norm):
                return False
    return True


def _length_eq(k, num, den, norm):
    if norm == "euclidean":
        return den * den * sq(k) == num * num
    if norm == "sup":
        return den * max(abs(c) for c in k) == num
    return den * sum(abs(c) for c in k) == num


def log_grid_required_lnM_factorial(d, s, sp, beta, lo_exp=0.0, hi_exp=16.0, points=4001):
    """Max over a log-spaced k grid of the lnM the factorial inequality needs (30-digit arithmetic)."""
    from mpmath import log, loggamma, mp, mpf

    mp.dps = 30
    best = -math.inf
    for k in np.unique(np.round(np.logspace(lo_exp, hi_exp, points))):
        k = mpf(int(k))
        val = (30 * d * k + s * log(100) + log(beta) + (4 * d - 2 * sp) * loggamma(k + 1)) / (sp - 2 * d)
        best = max(best, float(val))
    return best

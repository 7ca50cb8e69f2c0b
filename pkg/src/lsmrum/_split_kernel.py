"""Compiled quadratic-split kernel.

Same decisions, in the same order, as the pure Python partition in
:mod:`lsmrum.rtree`; only the representation differs (flat arrays instead
of lists). Split dominates insert cost in the interpreter, so this is the
one place the package leans on numba.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def quadratic_partition(b: np.ndarray, min_entries: int):
    """Partition rows of ``b`` into two groups.

    Rows are ``x0, y0, x1, y1`` bounds, or ``x, y`` points when ``b`` has
    two columns. Returns ``(order, n1, box)``: ``order[:n1]`` is the first
    group and ``order[n1:]`` the second, each in assignment order, and
    ``box`` holds the bounds of both groups (first group, then second).
    """
    n = b.shape[0]
    cols = b.shape[1]
    x0 = b[:, 0]
    y0 = b[:, 1]
    x1 = b[:, cols - 2]
    y1 = b[:, cols - 1]
    areas = (x1 - x0) * (y1 - y0)

    worst = -np.inf
    s1 = 0
    s2 = 1
    for i in range(n - 1):
        for j in range(i + 1, n):
            w = max(x1[i], x1[j]) - min(x0[i], x0[j])
            h = max(y1[i], y1[j]) - min(y0[i], y0[j])
            d = w * h - areas[i] - areas[j]
            if d > worst:
                worst = d
                s1 = i
                s2 = j

    g1 = np.empty(n, np.int64)
    g2 = np.empty(n, np.int64)
    g1[0] = s1
    g2[0] = s2
    n1 = 1
    n2 = 1
    rest = np.empty(n, np.int64)
    nr = 0
    for k in range(n):
        if k != s1 and k != s2:
            rest[nr] = k
            nr += 1

    r1x0, r1y0, r1x1, r1y1 = x0[s1], y0[s1], x1[s1], y1[s1]
    r2x0, r2y0, r2x1, r2y1 = x0[s2], y0[s2], x1[s2], y1[s2]
    a1 = areas[s1]
    a2 = areas[s2]
    d1 = np.zeros(n)
    d2 = np.zeros(n)
    for p in range(nr):
        k = rest[p]
        d1[k] = (max(r1x1, x1[k]) - min(r1x0, x0[k])) * (max(r1y1, y1[k]) - min(r1y0, y0[k])) - a1
        d2[k] = (max(r2x1, x1[k]) - min(r2x0, x0[k])) * (max(r2y1, y1[k]) - min(r2y0, y0[k])) - a2

    while nr > 0:
        if n1 + nr == min_entries:
            for p in range(nr):
                g1[n1] = rest[p]
                n1 += 1
            break
        if n2 + nr == min_entries:
            for p in range(nr):
                g2[n2] = rest[p]
                n2 += 1
            break
        best = -1.0
        pick = 0
        for p in range(nr):
            k = rest[p]
            diff = abs(d1[k] - d2[k])
            if diff > best:
                best = diff
                pick = p
        k = rest[pick]
        for p in range(pick, nr - 1):
            rest[p] = rest[p + 1]
        nr -= 1
        e1 = d1[k]
        e2 = d2[k]
        if e1 < e2:
            to_first = True
        elif e2 < e1:
            to_first = False
        elif a1 != a2:
            to_first = a1 < a2
        else:
            to_first = n1 <= n2
        if to_first:
            g1[n1] = k
            n1 += 1
            r1x0 = min(r1x0, x0[k])
            r1y0 = min(r1y0, y0[k])
            r1x1 = max(r1x1, x1[k])
            r1y1 = max(r1y1, y1[k])
            a1 = (r1x1 - r1x0) * (r1y1 - r1y0)
            for p in range(nr):
                q = rest[p]
                d1[q] = (max(r1x1, x1[q]) - min(r1x0, x0[q])) * (max(r1y1, y1[q]) - min(r1y0, y0[q])) - a1
        else:
            g2[n2] = k
            n2 += 1
            r2x0 = min(r2x0, x0[k])
            r2y0 = min(r2y0, y0[k])
            r2x1 = max(r2x1, x1[k])
            r2y1 = max(r2y1, y1[k])
            a2 = (r2x1 - r2x0) * (r2y1 - r2y0)
            for p in range(nr):
                q = rest[p]
                d2[q] = (max(r2x1, x1[q]) - min(r2x0, x0[q])) * (max(r2y1, y1[q]) - min(r2y0, y0[q])) - a2

    order = np.empty(n, np.int64)
    order[:n1] = g1[:n1]
    order[n1:] = g2[:n2]
    box = np.empty(8)
    for g in range(2):
        lo = 0 if g == 0 else n1
        hi = n1 if g == 0 else n
        bx0 = np.inf
        by0 = np.inf
        bx1 = -np.inf
        by1 = -np.inf
        for p in range(lo, hi):
            k = order[p]
            bx0 = min(bx0, x0[k])
            by0 = min(by0, y0[k])
            bx1 = max(bx1, x1[k])
            by1 = max(by1, y1[k])
        box[4 * g] = bx0
        box[4 * g + 1] = by0
        box[4 * g + 2] = bx1
        box[4 * g + 3] = by1
    return order, n1, box

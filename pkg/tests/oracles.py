"""Exact interval arithmetic on T^1 and T^2 for axis-aligned sets.

Arcs are (center, half_width) in turns; boxes are pairs of arcs. Sumsets of
arcs are arcs, so measures of products of unions are exact.
"""
from __future__ import annotations

import numpy as np

from lielab.group_core import Torus
from lielab.regions import Ball, Intersection, Translate, Union
from lielab.subgroup_catalog import builtin_subgroup, tube


def _arc_pieces(c, h):
    """Open arc (c - h, c + h) mod 1 as pieces inside [0, 1)."""
    if 2 * h >= 1:
        return [(0.0, 1.0)]
    lo = (c - h) % 1.0
    hi = lo + 2 * h
    if hi <= 1:
        return [(lo, hi)]
    return [(lo, 1.0), (0.0, hi - 1.0)]


def union_length(arcs):
    pieces = sorted(p for c, h in arcs for p in _arc_pieces(c, h))
    tot, cur_lo, cur_hi = 0.0, None, None
    for lo, hi in pieces:
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                tot += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        tot += cur_hi - cur_lo
    return min(tot, 1.0)


def arc_sumset(A, B):
    return [(a + b, ha + hb) for a, ha in A for b, hb in B]


def union_area(boxes):
    """Area of a union of boxes ((cx, hx), (cy, hy)) on the unit torus."""
    rects = []
    for (cx, hx), (cy, hy) in boxes:
        for x0, x1 in _arc_pieces(cx, hx):
            for y0, y1 in _arc_pieces(cy, hy):
                rects.append((x0, x1, y0, y1))
    if not rects:
        return 0.0
    xs = sorted({r[0] for r in rects} | {r[1] for r in rects})
    area = 0.0
    for xa, xb in zip(xs, xs[1:]):
        mid = 0.5 * (xa + xb)
        ys = [(r[2], r[3]) for r in rects if r[0] <= mid < r[1]]
        if ys:
            area += (xb - xa) * union_length([(0.5 * (a + b), 0.5 * (b - a)) for a, b in ys])
    return min(area, 1.0)


def box_sumset(A, B):
    return [((ax + bx, hx + kx), (ay + by, hy + ky))
            for (ax, hx), (ay, hy) in A for (bx, kx), (by, ky) in B]


# regions matching the oracle shapes ------------------------------------------------

def arc_region(G: Torus, c, h):
    """Open arc of half-width h turns centred at c on T^1."""
    return Ball(G, np.array([c]), h / G.diameter_raw)


def arcs_region(G, arcs):
    r = arc_region(G, *arcs[0])
    for a in arcs[1:]:
        r = Union(r, arc_region(G, *a))
    return r


def box_region(G: Torus, bx, by):
    """Open box on T^2: |x - cx| < hx, |y - cy| < hy (turns)."""
    (cx, hx), (cy, hy) = bx, by
    band_y = tube(builtin_subgroup(G, "t1_x"), hy / G.diameter_raw)  # |y| < hy
    band_x = tube(builtin_subgroup(G, "t1_y"), hx / G.diameter_raw)  # |x| < hx
    return Translate(Intersection(band_x, band_y), np.array([cx, cy]))


def boxes_region(G, boxes):
    r = box_region(G, *boxes[0])
    for b in boxes[1:]:
        r = Union(r, box_region(G, *b))
    return r


def random_arcs(rng, k, hmax=0.15):
    return [(float(rng.random()), float(rng.uniform(0.005, hmax))) for _ in range(k)]


def random_boxes(rng, k, hmax=0.15):
    return [((float(rng.random()), float(rng.uniform(0.01, hmax))),
             (float(rng.random()), float(rng.uniform(0.01, hmax)))) for _ in range(k)]

"""Set regions: membership predicates with optional certified distance bounds.

A region answers three questions about batches of points P (group parameter
arrays) and radii r:

    contains(P)        membership of the points themselves
    ball_test(P, r)    (inside, meets): B(P, r) lies inside the region /
                       B(P, r) may intersect it; certified regions never
                       report inside wrongly nor miss an intersection
    depth(P)           radius s with B(P, s) inside the region (0 if unknown)

Regions that are invariant under a symmetry also expose an interval profile
on the one-dimensional quotient used by reduced nets.
"""
from __future__ import annotations

import numpy as np

from .group_core import Group


class ChartError(ValueError):
    pass


class Intervals:
    """Finite union of half-open intervals [lo, hi) on a line or circle."""

    def __init__(self, pieces=(), period: float | None = None):
        self.period = period
        out = []
        for lo, hi in pieces:
            if hi <= lo:
                continue
            if period is not None:
                if hi - lo >= period:
                    out = [(0.0, period)]
                    break
                lo0 = lo % period
                hi0 = lo0 + (hi - lo)
                if hi0 > period:
                    out += [(lo0, period), (0.0, hi0 - period)]
                else:
                    out.append((lo0, hi0))
            else:
                out.append((lo, hi))
        out.sort()
        merged = []
        for lo, hi in out:
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
            else:
                merged.append((lo, hi))
        self.pieces = merged

    def union(self, other):
        return Intervals(self.pieces + other.pieces, self.period)

    def intersect(self, other):
        out = []
        for a, b in self.pieces:
            for c, d in other.pieces:
                lo, hi = max(a, c), min(b, d)
                if hi > lo:
                    out.append((lo, hi))
        return Intervals(out, self.period)

    def length(self):
        return sum(hi - lo for lo, hi in self.pieces)

    def __repr__(self):
        return f"Intervals({self.pieces})"


class Boxes:
    """Finite union of products I_v x I_a on a two-parameter quotient."""

    def __init__(self, boxes=()):
        self.boxes = [(v, a) for v, a in boxes if v.pieces and a.pieces]

    def union(self, other):
        return Boxes(self.boxes + other.boxes)

    def intersect(self, other):
        return Boxes([(v1.intersect(v2), a1.intersect(a2))
                      for v1, a1 in self.boxes for v2, a2 in other.boxes])

    def __repr__(self):
        return f"Boxes({self.boxes})"


class SetRegion:
    """Base region. ``certified`` says whether ball_test/depth are sound."""

    certified = False
    description = "?"

    def __init__(self, group: Group):
        self.group = group

    def contains(self, P):
        raise NotImplementedError

    def sdf(self, P):
        """Signed distance bound: >0 inside (depth), <0 outside (-distance)."""
        return None

    def depth(self, P):
        s = self.sdf(P)
        if s is None:
            return np.zeros(np.shape(P)[:-1])
        return np.maximum(s, 0.0)

    def ball_test(self, P, r):
        s = self.sdf(P)
        if s is None:
            c = self.contains(P)
            return c, c
        r = np.asarray(r, float)
        return s >= r, s > -r

    def reduced(self, key):
        """Interval profile on a quotient (see measure_engine.ReducedNet)."""
        return None

    def __repr__(self):
        return f"<{type(self).__name__} {self.description}>"


class Everything(SetRegion):
    certified = True
    description = "all"

    def contains(self, P):
        return np.ones(np.shape(P)[:-1], bool)

    def sdf(self, P):
        return np.full(np.shape(P)[:-1], np.inf)

    def reduced(self, key):
        if key.kind == "hgrid":
            return Boxes([(Intervals([(key.lo, key.hi + 1.0)]), key.full_a())])
        return Intervals([(key.lo, key.hi + 1.0)], key.period)


class Nothing(SetRegion):
    certified = True
    description = "empty"

    def contains(self, P):
        return np.zeros(np.shape(P)[:-1], bool)

    def sdf(self, P):
        return np.full(np.shape(P)[:-1], -np.inf)

    def reduced(self, key):
        if key.kind == "hgrid":
            return Boxes()
        return Intervals([], key.period)


class Ball(SetRegion):
    certified = True

    def __init__(self, group, center, radius):
        super().__init__(group)
        self.center = group.project(np.asarray(center, float))
        self.radius = float(radius)
        c = ",".join(f"{v:g}" for v in np.ravel(center))
        self.description = f"ball:{c}:{radius:g}"

    def distance(self, P):
        return self.group.dist(self.center, P)

    def contains(self, P):
        return self.distance(P) < self.radius

    def sdf(self, P):
        return self.radius - self.distance(P)

    def reduced(self, key):
        if key.kind == "class" and key.group == self.group and self.group.dist_e(self.center) < 1e-12:
            return Intervals([(0.0, self.radius)], None)
        return None


class Tube(SetRegion):
    certified = True

    def __init__(self, H, delta):
        super().__init__(H.ambient)
        self.H = H
        self.delta = float(delta)
        self.description = f"tube:{H.name}:{delta:g}"

    def contains(self, P):
        return self.H.distance(P) < self.delta

    def sdf(self, P):
        return self.delta - self.H.distance(P)

    def reduced(self, key):
        if key.kind == "dcoset" and key.subgroup == self.H:
            return key.tube_profile(self.delta)
        if key.kind == "hgrid" and key.subgroup == self.H:
            return Boxes([(Intervals([(0.0, self.delta)]), key.full_a())])
        return None


class Rectangle(SetRegion):
    """h exp(B_perp(delta)) exp(B_h(rho)) through the split chart of H."""

    certified = True

    def __init__(self, H, h, delta, rho):
        super().__init__(H.ambient)
        if not 0 < delta <= 0.25 or rho <= 0:
            raise ChartError(f"rectangle ({delta}, {rho}) outside the chart (need 0 < delta <= 0.25, rho > 0)")
        self.H = H
        self.h = np.asarray(h, float)
        self.delta = float(delta)
        self.rho = float(rho)
        hp = np.ravel(H.h_param(self.h))
        hs = ",".join(f"{v:g}" for v in hp)
        self.description = f"rect:{H.name}:{hs}:{delta:g}:{rho:g}"

    def coords(self, P):
        k = self.group.mul(self.group.inv(self.h), P)
        v, a = self.H.rect_coords(k)
        return v, np.linalg.norm(a, axis=-1)

    def contains(self, P):
        v, a = self.coords(P)
        return (v < self.delta) & (a < self.rho)

    def depth(self, P):
        v, a = self.coords(P)
        L = self.H.lipschitz(self.delta)
        return np.maximum(np.minimum(self.delta - v, (self.rho - a) / L), 0.0)

    def sdf(self, P):
        v, a = self.coords(P)
        L = self.H.lipschitz(self.delta)
        inside = (v < self.delta) & (a < self.rho)
        din = np.minimum(self.delta - v, (self.rho - a) / L)
        dout = np.maximum(v - self.delta, 0.0)
        return np.where(inside, din, -dout)

    def ball_test(self, P, r):
        v, a = self.coords(P)
        r = np.asarray(r, float)
        inside = (v + r <= self.delta) & (a + self.H.lipschitz(self.delta) * r <= self.rho)
        far = (v - r >= self.delta) | (a - self.H.lipschitz(self.delta + r) * r >= self.rho)
        return inside, ~far

    def reduced(self, key):
        if key.kind != "hgrid" or key.subgroup != self.H:
            return None
        c = float(np.ravel(self.H.h_param(self.h))[0])
        return Boxes([(Intervals([(0.0, self.delta)]),
                       Intervals([(c - self.rho, c + self.rho)], key.a_period))])


class Union(SetRegion):
    def __init__(self, a: SetRegion, b: SetRegion):
        super().__init__(a.group)
        self.a, self.b = a, b
        self.certified = a.certified and b.certified
        self.description = f"union({a.description},{b.description})"

    def contains(self, P):
        return self.a.contains(P) | self.b.contains(P)

    def sdf(self, P):
        sa, sb = self.a.sdf(P), self.b.sdf(P)
        if sa is None or sb is None:
            return None
        return np.maximum(sa, sb)

    def ball_test(self, P, r):
        ia, ma = self.a.ball_test(P, r)
        ib, mb = self.b.ball_test(P, r)
        return ia | ib, ma | mb

    def depth(self, P):
        return np.maximum(self.a.depth(P), self.b.depth(P))

    def reduced(self, key):
        ra, rb = self.a.reduced(key), self.b.reduced(key)
        return None if ra is None or rb is None else ra.union(rb)


class Intersection(SetRegion):
    def __init__(self, a: SetRegion, b: SetRegion):
        super().__init__(a.group)
        self.a, self.b = a, b
        self.certified = a.certified and b.certified
        self.description = f"inter({a.description},{b.description})"

    def contains(self, P):
        return self.a.contains(P) & self.b.contains(P)

    def sdf(self, P):
        sa, sb = self.a.sdf(P), self.b.sdf(P)
        if sa is None or sb is None:
            return None
        return np.minimum(sa, sb)

    def ball_test(self, P, r):
        ia, ma = self.a.ball_test(P, r)
        ib, mb = self.b.ball_test(P, r)
        return ia & ib, ma & mb

    def depth(self, P):
        return np.minimum(self.a.depth(P), self.b.depth(P))

    def reduced(self, key):
        ra, rb = self.a.reduced(key), self.b.reduced(key)
        return None if ra is None or rb is None else ra.intersect(rb)


class Translate(SetRegion):
    """g A (side='left') or A g (side='right')."""

    def __init__(self, a: SetRegion, g, side="left"):
        super().__init__(a.group)
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        self.a = a
        self.g = a.group.project(np.asarray(g, float))
        self.side = side
        self.certified = a.certified
        gs = ",".join(f"{v:g}" for v in np.ravel(g))
        self.description = f"translate({a.description},{gs})" + ("" if side == "left" else ":right")

    def pull(self, P):
        gi = self.group.inv(self.g)
        return self.group.mul(gi, P) if self.side == "left" else self.group.mul(P, gi)

    def contains(self, P):
        return self.a.contains(self.pull(P))

    def sdf(self, P):
        return self.a.sdf(self.pull(P))

    def ball_test(self, P, r):
        return self.a.ball_test(self.pull(P), r)

    def depth(self, P):
        return self.a.depth(self.pull(P))


class Conjugate(SetRegion):
    """g A g^-1; the metric is bi-invariant so distance bounds carry over."""

    def __init__(self, a: SetRegion, g):
        super().__init__(a.group)
        self.a = a
        self.g = a.group.project(np.asarray(g, float))
        self.certified = a.certified
        gs = ",".join(f"{v:g}" for v in np.ravel(g))
        self.description = f"conj({a.description},{gs})"

    def pull(self, P):
        G = self.group
        return G.mul(G.mul(G.inv(self.g), P), self.g)

    def contains(self, P):
        return self.a.contains(self.pull(P))

    def sdf(self, P):
        return self.a.sdf(self.pull(P))

    def ball_test(self, P, r):
        return self.a.ball_test(self.pull(P), r)

    def depth(self, P):
        return self.a.depth(self.pull(P))


class Predicate(SetRegion):
    """Arbitrary membership function; no distance information."""

    def __init__(self, group, fn, description="predicate"):
        super().__init__(group)
        self.fn = fn
        self.description = description

    def contains(self, P):
        return np.asarray(self.fn(np.asarray(P, float)), bool)

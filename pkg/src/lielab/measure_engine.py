"""Discretized sets on a fixed partition of a group and Haar measure brackets.

A net is a partition of the group into cells with known Haar weights. Each
cell i has a center c_i and a radius r_i with cell_i inside B(c_i, r_i).
A CellSet stores three indicators over the cells:

    inner    cells certified to lie inside the set
    nominal  cells whose center lies in the set (point estimate)
    outer    cells that may meet the set

so that the union of inner cells is inside the set and the set is inside the
union of outer cells. ``depth[i]`` is a radius with B(c_i, depth[i]) inside
the set, used to grow inner brackets under products.

Net kinds:
    box      SU2 / SO3 split into boxes of toroidal coordinates with exact weights
    lattice  tori, product of uniform grids
    sample   any group; Haar-sample centers, Voronoi cells, Monte-Carlo weights
    reduced  one-dimensional quotient (double cosets of H, or conjugacy classes)
             for sets with that symmetry; exact interval arithmetic
    hgrid    two-parameter quotient (distance to H, H-coordinate) for sets
             invariant under conjugation by H, such as tubes and rectangles
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from math import ceil, pi, sqrt

import numpy as np
from scipy.spatial import cKDTree

from .group_core import SO3, SU2, Group, Torus
from .regions import Boxes, Everything, Intervals, SetRegion

EPS = 1e-12


class NetMismatch(ValueError):
    pass


class NotInvariant(ValueError):
    pass


@dataclass(frozen=True)
class MeasureEstimate:
    lower: float
    upper: float
    method: str = "cell-bracket"
    mc_stderr: float | None = None
    estimate: float | None = None
    certified: bool = True

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.upper <= 1.0 + 1e-9):
            raise ValueError(f"bad bracket [{self.lower}, {self.upper}]")

    @property
    def mid(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, x, slack=0.0):
        return self.lower - slack <= x <= self.upper + slack

    def to_dict(self):
        d = {"lower": self.lower, "upper": self.upper, "method": self.method,
             "certified": self.certified}
        if self.mc_stderr is not None:
            d["mc_stderr"] = self.mc_stderr
        if self.estimate is not None:
            d["estimate"] = self.estimate
        return d


# nets ------------------------------------------------------------------------

class Net:
    kind = "?"
    certified_weights = True

    group: Group
    centers: np.ndarray
    radii: np.ndarray
    weights: np.ndarray

    @property
    def n_cells(self):
        return len(self.centers)

    @property
    def cell_radius(self):
        return float(np.max(self.radii))

    def _hash(self, *extra):
        h = hashlib.sha256()
        h.update(f"{self.kind}|{self.group.name}|{self.n_cells}|{extra}".encode())
        h.update(np.round(self.centers, 12).tobytes())
        h.update(np.round(self.weights, 15).tobytes())
        return h.hexdigest()

    def describe(self):
        return {"kind": self.kind, "group": self.group.name, "n_cells": self.n_cells,
                "cell_radius": self.cell_radius, "net_hash": self.net_hash,
                "certified_weights": self.certified_weights}

    # neighbour search ----------------------------------------------------
    def _tree(self):
        if getattr(self, "_kd", None) is None:
            copies = self.group.embed_copies(self.centers)
            self._kd = cKDTree(np.concatenate(copies, axis=0))
        return self._kd

    def near(self, P, R):
        """Pairs (point index, cell index) with d(P, c) <= R (R per point)."""
        P = np.atleast_2d(np.asarray(P, float))
        R = np.broadcast_to(np.asarray(R, float), (len(P),))
        tree = self._tree()
        chord = self.group.chord(R) * (1 + 1e-9) + 1e-12
        pi_list, ci_list = [], []
        step = 20000
        for s in range(0, len(P), step):
            lists = tree.query_ball_point(self.group.embed(P[s:s + step]), chord[s:s + step])
            lens = np.fromiter((len(x) for x in lists), int, len(lists))
            if lens.sum() == 0:
                continue
            ci = np.concatenate([np.asarray(x, int) for x in lists if len(x)]) % self.n_cells
            pi_ = np.repeat(np.arange(s, s + len(lists)), lens)
            pi_list.append(pi_)
            ci_list.append(ci)
        if not pi_list:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        pi_ = np.concatenate(pi_list)
        ci = np.concatenate(ci_list)
        key = np.unique(pi_.astype(np.int64) * self.n_cells + ci)
        pi_, ci = key // self.n_cells, key % self.n_cells
        d = self.group.dist(self.centers[ci], P[pi_])
        ok = d <= R[pi_] + 1e-12
        return pi_[ok], ci[ok], d[ok]

    def locate(self, P):
        raise NotImplementedError

    # set operations -------------------------------------------------------
    def _dilate(self, P, R, extra_radius=True):
        """Cells k with d(c_k, P) <= R + r_k; returns boolean mask."""
        mask = np.zeros(self.n_cells, bool)
        if len(P) == 0:
            return mask
        pad = self.cell_radius if extra_radius else 0.0
        pi_, ci, d = self.near(P, np.asarray(R) + pad)
        keep = d <= np.asarray(R)[pi_] + (self.radii[ci] if extra_radius else 0.0) + 1e-12
        mask[ci[keep]] = True
        return mask

    def _grow_inner(self, P, T):
        """Cells k with d(c_k, P) + r_k <= T; returns (mask, depth)."""
        mask = np.zeros(self.n_cells, bool)
        depth = np.zeros(self.n_cells)
        ok = T > 0
        P, T = P[ok], T[ok]
        if len(P) == 0:
            return mask, depth
        pi_, ci, d = self.near(P, T)
        keep = d + self.radii[ci] <= T[pi_] - 1e-12
        np.maximum.at(depth, ci[keep], T[pi_][keep] - d[keep])
        mask[ci[keep]] = True
        return mask, depth

    def _snap_products(self, ia, ib, value_fn, reduce="max"):
        """Multiply centers of all pairs, snap each product to its cell.

        Returns the unique snapped cells s and, per s, the max of
        value_fn(i, j, m) where m = d(product, c_s).
        """
        G = self.group
        best = np.full(self.n_cells, -np.inf)
        if len(ia) == 0 or len(ib) == 0:
            return np.zeros(0, int), np.zeros(0)
        chunk = max(1, 2_000_000 // len(ib))
        cb = self.centers[ib]
        for s in range(0, len(ia), chunk):
            ii = ia[s:s + chunk]
            prod = G.mul(self.centers[ii][:, None, :], cb[None, :, :]).reshape(-1, G.param_dim)
            I = np.repeat(ii, len(ib))
            J = np.tile(ib, len(ii))
            cell = self.locate(prod)
            m = G.dist(self.centers[cell], prod)
            np.maximum.at(best, cell, value_fn(I, J, m))
        cells = np.nonzero(best > -np.inf)[0]
        return cells, best[cells]

    def product(self, A: "CellSet", B: "CellSet") -> "CellSet":
        ra, rb = self.radii, self.radii
        ia, ib = np.nonzero(A.outer)[0], np.nonzero(B.outer)[0]
        cells, R = self._snap_products(ia, ib, lambda i, j, m: m + ra[i] + rb[j])
        outer = self._dilate(self.centers[cells], R)
        da, db = A.depth, B.depth
        ja, jb = np.nonzero(da > 0)[0], np.nonzero(db > 0)[0]
        cells_i, T = self._snap_products(ja, jb, lambda i, j, m: da[i] + db[j] - m)
        inner, depth = self._grow_inner(self.centers[cells_i], T)
        na, nb = np.nonzero(A.nominal)[0], np.nonzero(B.nominal)[0]
        cells_n, _ = self._snap_products(na, nb, lambda i, j, m: -m)
        nominal = np.zeros(self.n_cells, bool)
        nominal[cells_n] = True
        inner &= outer
        return CellSet(self, inner, nominal | inner, outer | nominal, depth * inner,
                       A.certified and B.certified, f"({A.description})({B.description})")

    def translate(self, A: "CellSet", g, side="left") -> "CellSet":
        G = self.group
        g = G.project(np.asarray(g, float))

        def move(idx):
            c = self.centers[idx]
            return G.mul(g[None, :], c) if side == "left" else G.mul(c, g[None, :])

        io = np.nonzero(A.outer)[0]
        outer = self._dilate(move(io), self.radii[io])
        idp = np.nonzero(A.depth > 0)[0]
        inner, depth = self._grow_inner(move(idp), A.depth[idp])
        inn = np.nonzero(A.nominal)[0]
        nominal = np.zeros(self.n_cells, bool)
        nominal[self.locate(move(inn))] = True
        inner &= outer
        return CellSet(self, inner, nominal | inner, outer | nominal, depth * inner, A.certified,
                       f"translate({A.description})")


class BoxNet(Net):
    """Partition of SU2 or SO3 in toroidal coordinates.

    q = (cos(b/2) e^{iP}, sin(b/2) e^{iM}) written as (w, z) and (x, y) pairs.
    Haar measure is d(-cos b)/2 x dP/|P range| x dM/2pi, so boxes in
    (b, P, M) have exact weights. Within a band of b every box is the image
    of the first one under left/right multiplication by z-rotations, so one
    radius per band suffices.
    """

    kind = "box"

    def __init__(self, group, target_cells: int):
        if not isinstance(group, (SU2, SO3)):
            raise TypeError("box nets are for SU2 and SO3")
        self.group = group
        self.prange = pi if isinstance(group, SO3) else 2 * pi
        vol = (pi ** 2) if isinstance(group, SO3) else 2 * pi ** 2
        h = (vol / target_cells) ** (1 / 3)
        while True:
            self._layout(h)
            if self._n >= target_cells:
                break
            h *= 0.99
        self._build()
        self.net_hash = self._hash(self.prange)

    def _layout(self, h):
        nb = max(1, int(ceil(pi / (2 * h))))
        edges = np.linspace(0.0, pi, nb + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        nP = np.maximum(1, np.ceil(self.prange * np.cos(mid / 2) / h)).astype(int)
        nM = np.maximum(1, np.ceil(2 * pi * np.sin(mid / 2) / h)).astype(int)
        self.edges, self.nP, self.nM = edges, nP, nM
        self.offsets = np.concatenate([[0], np.cumsum(nP * nM)])
        self._n = int(self.offsets[-1])

    @staticmethod
    def _quat(b, P, M):
        cb, sb = np.cos(b / 2), np.sin(b / 2)
        return np.stack([cb * np.cos(P), sb * np.cos(M), sb * np.sin(M), cb * np.sin(P)], axis=-1)

    def _build(self):
        nb = len(self.nP)
        band = np.repeat(np.arange(nb), self.nP * self.nM)
        local = np.arange(self._n) - self.offsets[band]
        iP = local // self.nM[band]
        iM = local % self.nM[band]
        dP = self.prange / self.nP[band]
        dM = 2 * pi / self.nM[band]
        b = 0.5 * (self.edges[band] + self.edges[band + 1])
        self.centers = self.group.project(self._quat(b, (iP + 0.5) * dP, (iM + 0.5) * dM))
        cos_e = np.cos(self.edges)
        self.weights = 0.5 * (cos_e[band] - cos_e[band + 1]) / (self.nP[band] * self.nM[band])
        self.weights = self.weights / self.weights.sum()
        self.band = band
        band_r = np.empty(nb)
        t = np.linspace(0.0, 1.0, 9)
        T = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)
        for j in range(nb):
            lo, hi = self.edges[j], self.edges[j + 1]
            dPj, dMj = self.prange / self.nP[j], 2 * pi / self.nM[j]
            pts = self._quat(lo + T[:, 0] * (hi - lo), T[:, 1] * dPj, T[:, 2] * dMj)
            c = self._quat(0.5 * (lo + hi), 0.5 * dPj, 0.5 * dMj)
            band_r[j] = np.max(self.group.dist(c[None, :], pts))
        self.band_radius = 1.2 * band_r
        self.radii = self.band_radius[band]

    def coords(self, P):
        P = np.asarray(P, float)
        w, x, y, z = np.moveaxis(P, -1, 0)
        b = 2 * np.arctan2(np.hypot(x, y), np.hypot(w, z))
        Pa = np.arctan2(z, w)
        M = np.arctan2(y, x)
        if isinstance(self.group, SO3):
            k = np.floor(Pa / pi)
            Pa = Pa - k * pi
            M = M - k * pi
        return b, np.mod(Pa, self.prange), np.mod(M, 2 * pi)

    def locate(self, P):
        b, Pa, M = self.coords(P)
        nb = len(self.nP)
        j = np.clip(np.searchsorted(self.edges, b, side="right") - 1, 0, nb - 1)
        iP = np.minimum((Pa / (self.prange / self.nP[j])).astype(int), self.nP[j] - 1)
        iM = np.minimum((M / (2 * pi / self.nM[j])).astype(int), self.nM[j] - 1)
        return self.offsets[j] + iP * self.nM[j] + iM


class LatticeNet(Net):
    """Uniform grid on T^d; cells are exact boxes and products are exact."""

    kind = "lattice"

    def __init__(self, group: Torus, target_cells: int):
        if not isinstance(group, Torus):
            raise TypeError("lattice nets are for tori")
        self.group = group
        d = group.d
        n = int(ceil(target_cells ** (1 / d) - 1e-9))
        while n ** d < target_cells:
            n += 1
        self.n = n
        self.shape = (n,) * d
        idx = np.indices(self.shape).reshape(d, -1).T
        self.centers = (idx + 0.5) / n
        self.weights = np.full(n ** d, 1.0 / n ** d)
        self.radii = np.full(n ** d, (sqrt(d) / (2 * n)) / group.diameter_raw)
        self.net_hash = self._hash(n)

    def locate(self, P):
        P = np.mod(np.asarray(P, float), 1.0)
        idx = np.minimum((P * self.n).astype(int), self.n - 1)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.shape)

    def _sumset(self, a, b):
        """Cells (i + j) + {0,1}^d for i in a, j in b (circular)."""
        A = a.reshape(self.shape).astype(float)
        B = b.reshape(self.shape).astype(float)
        if not A.any() or not B.any():
            return np.zeros(self.n_cells, bool)
        axes = tuple(range(self.group.d))
        C = np.fft.irfftn(np.fft.rfftn(A) * np.fft.rfftn(B), s=self.shape, axes=axes) > 0.5
        out = np.zeros(self.shape, bool)
        for shift in np.indices((2,) * self.group.d).reshape(self.group.d, -1).T:
            out |= np.roll(C, tuple(shift), axis=tuple(range(self.group.d)))
        return out.ravel()

    def product(self, A, B):
        outer = self._sumset(A.outer, B.outer)
        inner = self._sumset(A.inner, B.inner)
        depth = np.zeros(self.n_cells)
        da, db = A.depth, B.depth
        ja, jb = np.nonzero(da > 0)[0], np.nonzero(db > 0)[0]
        if 0 < len(ja) * len(jb) <= 4_000_000:
            cells_i, T = self._snap_products(ja, jb, lambda i, j, m: da[i] + db[j] - m)
            more, depth = self._grow_inner(self.centers[cells_i], T)
            inner |= more
        nominal = self._sumset(A.nominal, B.nominal)
        inner &= outer
        return CellSet(self, inner, nominal | inner, outer | nominal, depth * inner,
                       A.certified and B.certified, f"({A.description})({B.description})")

    def translate(self, A, g, side="left"):
        g = np.mod(np.asarray(g, float), 1.0)
        shift = g * self.n
        k = np.floor(shift).astype(int)
        frac = shift - k
        axes = tuple(range(self.group.d))

        def roll(mask, extra):
            M = np.roll(mask.reshape(self.shape), tuple(k + extra), axis=axes)
            return M.ravel()

        outer = np.zeros(self.n_cells, bool)
        inner = np.ones(self.n_cells, bool)
        for e in np.indices((2,) * self.group.d).reshape(self.group.d, -1).T:
            if np.any((e == 1) & (frac == 0)):
                continue
            outer |= roll(A.outer, e)
            inner &= roll(A.inner, e)
        nominal = roll(A.nominal, (frac >= 0.5).astype(int))
        return CellSet(self, inner, nominal | inner, outer | nominal, np.zeros(self.n_cells),
                       A.certified, f"translate({A.description})")


class SampleNet(Net):
    """Haar-sample centers with Voronoi cells; weights and radius are estimated."""

    kind = "sample"
    certified_weights = False

    def __init__(self, group: Group, target_cells: int, seed: int = 0, mc_factor: int = 20):
        self.group = group
        rng = np.random.default_rng(seed)
        self.centers = group.sample(rng, target_cells)
        counts = np.bincount(self.locate(group.sample(rng, mc_factor * target_cells)),
                             minlength=target_cells).astype(float)
        self.weights = counts / counts.sum()
        val = group.sample(rng, 10 * target_cells)
        cell = self.locate(val)
        d = group.dist(self.centers[cell], val)
        r = np.zeros(target_cells)
        np.maximum.at(r, cell, d)
        self.radii = np.full(target_cells, 1.2 * r.max())
        self.net_hash = self._hash(seed)

    def locate(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        tree = self._tree()
        k = min(8, len(tree.data))
        out = np.empty(len(P), int)
        step = 50000
        for s in range(0, len(P), step):
            Q = P[s:s + step]
            _, idx = tree.query(self.group.embed(Q), k=k)
            idx = np.atleast_2d(idx) % self.n_cells
            d = self.group.dist(self.centers[idx], Q[:, None, :])
            out[s:s + step] = idx[np.arange(len(Q)), np.argmin(d, axis=1)]
        return out


class ReducedKey:
    """Describes a one-dimensional quotient and its product law."""

    def __init__(self, kind, group, subgroup=None):
        self.kind = kind
        self.group = group
        self.subgroup = subgroup
        self.period = None
        if kind == "dcoset" and isinstance(group, Torus):
            self.law = "circle"
            self.period = 1.0
            self.lo, self.hi = 0.0, 1.0
            self.perp = subgroup.perp[0]
        elif kind == "dcoset" and isinstance(group, (SO3, SU2)):
            self.law = "cosine"
            self.lo, self.hi = 0.0, 1.0 if isinstance(group, SO3) else 0.5
            self.kappa = pi / self.hi
        elif kind == "class" and isinstance(group, (SO3, SU2)):
            self.law = "cosine"
            self.lo, self.hi = 0.0, 1.0
            self.kappa = pi
        else:
            raise ValueError(f"no reduced quotient '{kind}' for {group.name}")

    def cdf(self, s):
        s = np.asarray(s, float)
        if self.law == "circle":
            return s
        a = self.kappa * s
        if self.kind == "dcoset":
            return (1 - np.cos(a)) / 2
        if isinstance(self.group, SO3):
            return (a - np.sin(a)) / pi
        return (2 * a - np.sin(2 * a)) / (2 * pi)

    def tube_profile(self, delta):
        if self.law == "circle":
            w = delta * self.group.diameter_raw
            return Intervals([(-w, w)], 1.0)
        return Intervals([(0.0, delta)], None)

    def product_interval(self, I, J):
        """Image of the product of the parameter ranges I and J (closed)."""
        if self.law == "circle":
            return (I[0] + J[0], I[1] + J[1])
        k = self.kappa
        x0, x1, y0, y1 = I[0] * k, I[1] * k, J[0] * k, J[1] * k
        lo = max(0.0, x0 - y1, y0 - x1)
        s0, s1 = x0 + y0, x1 + y1
        if s1 <= pi:
            hi = s1
        elif s0 >= pi:
            hi = 2 * pi - s0
        else:
            hi = pi
        return (lo / k, hi / k)

    def label(self):
        return f"{self.kind}:{self.group.name}" + (f":{self.subgroup.name}" if self.subgroup else "")


class ReducedNet(Net):
    """Cells are intervals of a one-dimensional quotient parameter.

    For the cosine law the parameter is the normalized distance to H
    (double cosets) or to e (conjugacy classes); for tori it is the angle of
    the coordinate not in H.
    """

    kind = "reduced"

    def __init__(self, key: ReducedKey, target_cells: int):
        self.key = key
        self.group = key.group
        n = int(target_cells)
        self.edges = np.linspace(key.lo, key.hi, n + 1)
        self.weights = np.diff(key.cdf(self.edges))
        self.weights = self.weights / self.weights.sum()
        mids = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.mids = mids
        self.centers = self.representatives(mids)
        self.radii = np.zeros(n)
        self.net_hash = self._hash(key.label())

    @property
    def cell_radius(self):
        return float(np.max(np.diff(self.edges)))

    def representatives(self, s):
        G = self.group
        s = np.asarray(s, float)
        if self.key.law == "circle":
            out = np.zeros(s.shape + (G.d,))
            out[..., self.key.perp] = s
            return out
        X = np.zeros(s.shape + (3,))
        X[..., 0] = s
        return G.exp(X)

    def param(self, P):
        if self.key.law == "circle":
            return np.mod(np.asarray(P, float)[..., self.key.perp], 1.0)
        if self.key.kind == "dcoset":
            return self.key.subgroup.distance(P)
        return self.group.dist_e(P)

    def locate(self, P):
        s = self.param(P)
        return np.clip(np.searchsorted(self.edges, s, side="right") - 1, 0, self.n_cells - 1)

    def cells_meeting(self, iv: Intervals, eps=0.0):
        return _meet(self.edges, iv, eps)

    def cells_inside(self, iv: Intervals, eps=0.0):
        return _inside(self.edges, iv, eps)

    def cells_nominal(self, iv: Intervals):
        return _mids_in(self.mids, iv)

    def runs(self, mask):
        """Maximal runs of consecutive cells as parameter intervals."""
        m = np.concatenate([[False], mask, [False]]).astype(np.int8)
        d = np.diff(m)
        starts = np.nonzero(d == 1)[0]
        ends = np.nonzero(d == -1)[0]
        return [(self.edges[a], self.edges[b]) for a, b in zip(starts, ends)]

    def _prod(self, ma, mb):
        out = []
        for I in self.runs(ma):
            for J in self.runs(mb):
                out.append(self.key.product_interval(I, J))
        return out

    def product(self, A, B):
        per = self.key.period
        # product intervals are computed in floating point, so pad outward/inward
        outer = self.cells_meeting(Intervals(self._prod(A.outer, B.outer), per), EPS)
        inner = self.cells_inside(Intervals(self._prod(A.inner, B.inner), per), EPS)
        nominal = self.cells_nominal(Intervals(self._prod(A.nominal, B.nominal), per))
        inner &= outer
        return CellSet(self, inner, nominal | inner, outer | nominal, np.zeros(self.n_cells),
                       A.certified and B.certified, f"({A.description})({B.description})")

    def translate(self, A, g, side="left"):
        raise NotInvariant("reduced nets only hold sets with the quotient symmetry")

    def near(self, P, R):
        raise NotInvariant("reduced nets have no neighbour structure")


class HGridKey:
    """Quotient by conjugation with a one-parameter subgroup H of codimension 2
    (SO3, SU2) or of a two-torus. Coordinates: v = d(g, H) and the H-coordinate
    a taken modulo its period."""

    kind = "hgrid"
    period = None

    def __init__(self, group, subgroup):
        if subgroup.dim_h != 1 or subgroup.ambient != group:
            raise ValueError("hgrid quotients need a one-dimensional subgroup")
        self.group = group
        self.subgroup = subgroup
        self.torus = isinstance(group, Torus)
        if self.torus:
            if group.d != 2:
                raise ValueError("hgrid quotients on tori need d = 2")
            self.hi = 0.5 / group.diameter_raw
        elif isinstance(group, (SO3, SU2)):
            self.hi = 1.0 if isinstance(group, SO3) else 0.5
        else:
            raise ValueError(f"no hgrid quotient for {group.name}")
        self.lo = 0.0
        self.a_period = 2 * subgroup.diameter_h

    def full_a(self):
        return Intervals([(0.0, self.a_period)], self.a_period)

    def cdf(self, v):
        v = np.asarray(v, float)
        if self.torus:
            return v / self.hi
        return (1 - np.cos(pi * v / self.hi)) / 2

    def label(self):
        return f"hgrid:{self.group.name}:{self.subgroup.name}"


def _meet(edges, iv, eps=0.0):
    """Cells [e_k, e_k+1) meeting a union of half-open intervals."""
    m = np.zeros(len(edges) - 1, bool)
    for lo, hi in iv.pieces:
        m |= (edges[:-1] < hi + eps) & (edges[1:] > lo - eps)
    return m


def _inside(edges, iv, eps=0.0):
    m = np.zeros(len(edges) - 1, bool)
    for lo, hi in iv.pieces:
        m |= (edges[:-1] >= lo + eps) & (edges[1:] <= hi - eps)
    return m


def _mids_in(mids, iv):
    m = np.zeros(len(mids), bool)
    for lo, hi in iv.pieces:
        m |= (mids >= lo) & (mids < hi)
    return m


class HGridNet(Net):
    """n_v x n_a grid on the (v, a) quotient with exact product weights."""

    kind = "hgrid"

    def __init__(self, key: HGridKey, target_cells: int):
        self.key = key
        self.group = key.group
        nv = max(10, int(round(sqrt(target_cells / 10))))
        na = max(10, int(ceil(target_cells / nv)))
        self.nv, self.na = nv, na
        self.v_edges = np.linspace(key.lo, key.hi, nv + 1)
        self.a_edges = np.linspace(0.0, key.a_period, na + 1)
        wv = np.diff(key.cdf(self.v_edges))
        self.v_weights = wv / wv.sum()
        self.weights = np.repeat(self.v_weights / na, na)
        self.v_mids = 0.5 * (self.v_edges[:-1] + self.v_edges[1:])
        self.a_mids = 0.5 * (self.a_edges[:-1] + self.a_edges[1:])
        V = np.repeat(self.v_mids, na)
        A = np.tile(self.a_mids, nv)
        self.centers = self.representatives(V, A)
        self.radii = np.zeros(nv * na)
        self.net_hash = self._hash(key.label(), nv, na)

    @property
    def cell_radius(self):
        return float(max(np.diff(self.v_edges).max(), np.diff(self.a_edges).max()))

    def representatives(self, v, a):
        G, H = self.group, self.key.subgroup
        if self.key.torus:
            out = np.zeros(np.shape(v) + (2,))
            D = G.diameter_raw
            out[..., H.coords[0]] = a * D
            out[..., H.perp[0]] = v * D
            return out
        # exp(v e_x) exp(a e_z)
        X = np.zeros(np.shape(v) + (3,))
        X[..., 0] = v
        Z = np.zeros(np.shape(a) + (3,))
        Z[..., 2] = a
        return G.mul(G.exp(X), H.element(a))

    def coords(self, P):
        v, a = self.key.subgroup.rect_coords(P)
        return v, np.mod(a[..., 0], self.key.a_period)

    def locate(self, P):
        v, a = self.coords(P)
        iv = np.clip(np.searchsorted(self.v_edges, v, side="right") - 1, 0, self.nv - 1)
        ia = np.clip(np.searchsorted(self.a_edges, a, side="right") - 1, 0, self.na - 1)
        return iv * self.na + ia

    def _outer2(self, mv, ma):
        return (mv[:, None] & ma[None, :]).ravel()

    def cells(self, prof: Boxes):
        inner = np.zeros(self.n_cells, bool)
        outer = np.zeros(self.n_cells, bool)
        nominal = np.zeros(self.n_cells, bool)
        for iv, ia in prof.boxes:
            inner |= self._outer2(_inside(self.v_edges, iv), _inside(self.a_edges, ia))
            outer |= self._outer2(_meet(self.v_edges, iv), _meet(self.a_edges, ia))
            nominal |= self._outer2(_mids_in(self.v_mids, iv), _mids_in(self.a_mids, ia))
        return inner, nominal, outer

    def product(self, A, B):
        raise NotInvariant("products leave the hgrid quotient; use a dcoset or generic net")

    def translate(self, A, g, side="left"):
        raise NotInvariant("hgrid nets only hold sets invariant under conjugation by H")

    def near(self, P, R):
        raise NotInvariant("hgrid nets have no neighbour structure")


# cell sets -------------------------------------------------------------------

class CellSet:
    def __init__(self, net: Net, inner, nominal, outer, depth=None, certified=True, description=""):
        self.net = net
        self.inner = np.asarray(inner, bool)
        self.nominal = np.asarray(nominal, bool)
        self.outer = np.asarray(outer, bool)
        self.depth = np.zeros(net.n_cells) if depth is None else np.asarray(depth, float)
        self.certified = bool(certified) and net.certified_weights
        self.description = description

    def variant(self, role):
        return {"inner": self.inner, "nominal": self.nominal, "outer": self.outer}[role]

    def counts(self):
        return {"inner": int(self.inner.sum()), "nominal": int(self.nominal.sum()),
                "outer": int(self.outer.sum())}

    def is_empty(self):
        return not self.outer.any()

    def intersect(self, other: "CellSet") -> "CellSet":
        _check_net(self, other)
        return CellSet(self.net, self.inner & other.inner, self.nominal & other.nominal,
                       self.outer & other.outer, np.minimum(self.depth, other.depth),
                       self.certified and other.certified,
                       f"inter({self.description},{other.description})")

    def union(self, other: "CellSet") -> "CellSet":
        _check_net(self, other)
        return CellSet(self.net, self.inner | other.inner, self.nominal | other.nominal,
                       self.outer | other.outer, np.maximum(self.depth, other.depth),
                       self.certified and other.certified,
                       f"union({self.description},{other.description})")

    @classmethod
    def from_mask(cls, net, mask, description="cells"):
        mask = np.asarray(mask, bool)
        return cls(net, mask, mask, mask, None, False, description)

    def __repr__(self):
        c = self.counts()
        return f"CellSet({self.description!r}, inner={c['inner']}, outer={c['outer']})"


def _check_net(A, B):
    if A.net is not B.net and A.net.net_hash != B.net.net_hash:
        raise NetMismatch("cell sets live on different nets")


_NET_CACHE: dict = {}


def build_net(G: Group, target_cells: int, seed: int = 0, kind: str | None = None,
              subgroup=None, cache: bool = True) -> Net:
    """Partition G into about target_cells cells (at least target_cells for box/lattice)."""
    if target_cells < 1000:
        raise ValueError("target_cells must be at least 1000")
    if kind is None:
        kind = "lattice" if isinstance(G, Torus) else "box" if isinstance(G, (SU2, SO3)) else "sample"
    ck = (G.key(), target_cells, seed, kind, getattr(subgroup, "name", None))
    if cache and ck in _NET_CACHE:
        return _NET_CACHE[ck]
    if kind == "lattice":
        net = LatticeNet(G, target_cells)
    elif kind == "box":
        net = BoxNet(G, target_cells)
    elif kind == "sample":
        net = SampleNet(G, target_cells, seed)
    elif kind in ("dcoset", "class"):
        net = ReducedNet(ReducedKey(kind, G, subgroup), target_cells)
    elif kind == "hgrid":
        net = HGridNet(HGridKey(G, subgroup), target_cells)
    else:
        raise ValueError(f"unknown net kind '{kind}'")
    if cache:
        _NET_CACHE[ck] = net
    return net


def discretize(region: SetRegion, net: Net) -> CellSet:
    if region.group != net.group:
        raise NetMismatch(f"region on {region.group.name}, net on {net.group.name}")
    if isinstance(net, HGridNet):
        prof = region.reduced(net.key)
        if prof is None:
            raise NotInvariant(f"{region.description} has no profile on {net.key.label()}")
        inner, nominal, outer = net.cells(prof)
        return CellSet(net, inner, nominal | inner, outer | nominal, None, True, region.description)
    if isinstance(net, ReducedNet):
        prof = region.reduced(net.key)
        if prof is None:
            raise NotInvariant(f"{region.description} has no profile on {net.key.label()}")
        return CellSet(net, net.cells_inside(prof), net.cells_nominal(prof), net.cells_meeting(prof),
                       None, True, region.description)
    inside, meets = region.ball_test(net.centers, net.radii)
    nominal = np.asarray(region.contains(net.centers), bool)
    certified = region.certified
    depth = np.asarray(region.depth(net.centers), float) if certified else np.zeros(net.n_cells)
    inside = np.asarray(inside, bool)
    meets = np.asarray(meets, bool) | inside | nominal
    return CellSet(net, inside, nominal | inside, meets, np.where(depth > 0, depth, 0.0),
                   certified, region.description)


def measure(A: CellSet) -> MeasureEstimate:
    w = A.net.weights
    # sums of many weights can overshoot 1 by rounding
    lo = min(float(np.sum(w[A.inner])), 1.0)
    hi = min(float(np.sum(w[A.outer])), 1.0)
    est = min(float(np.sum(w[A.nominal])), 1.0)
    return MeasureEstimate(min(lo, hi), min(max(lo, hi), 1.0), "cell-bracket", None, est, A.certified)


def minkowski_product(A: CellSet, B: CellSet) -> CellSet:
    _check_net(A, B)
    return A.net.product(A, B)


def translate(A: CellSet, g, side: str = "left") -> CellSet:
    data = getattr(g, "data", g)
    return A.net.translate(A, data, side)


def slice_set(A: CellSet, H, h, delta: float, rho: float) -> CellSet:
    """A intersected with the rectangle R(h, delta, rho) around H."""
    from .regions import Rectangle

    R = Rectangle(H, np.asarray(getattr(h, "data", h), float), delta, rho)
    net = A.net
    if isinstance(net, (HGridNet, ReducedNet)):
        return A.intersect(discretize(R, net))
    idx = np.nonzero(A.outer)[0]
    inner = np.zeros(net.n_cells, bool)
    outer = np.zeros(net.n_cells, bool)
    nominal = np.zeros(net.n_cells, bool)
    depth = np.zeros(net.n_cells)
    if len(idx):
        ins, meets = R.ball_test(net.centers[idx], net.radii[idx])
        nom = R.contains(net.centers[idx])
        inner[idx] = ins & A.inner[idx]
        outer[idx] = meets | nom
        nominal[idx] = nom & A.nominal[idx]
        depth[idx] = np.minimum(R.depth(net.centers[idx]), A.depth[idx])
    return CellSet(net, inner, nominal | inner, outer, depth * inner, A.certified,
                   f"slice({A.description},{R.description})")


def mc_measure(region: SetRegion, n: int, seed, z: float = 1.959963984540054) -> MeasureEstimate:
    """Hit fraction of n Haar samples with a Wilson score interval."""
    if n < 1000:
        raise ValueError("n must be at least 1000")
    rng = np.random.default_rng(seed)
    hits = 0
    step = 200_000
    for s in range(0, n, step):
        m = min(step, n - s)
        hits += int(np.count_nonzero(region.contains(region.group.sample(rng, m))))
    p = hits / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return MeasureEstimate(max(0.0, centre - half), min(1.0, centre + half), "monte-carlo",
                           sqrt(p * (1 - p) / n), p, False)


# serialization -----------------------------------------------------------------

MAGIC = b"LBCS"
VERSION = 1
_ROLES = {"inner": 0, "nominal": 1, "outer": 2}


def _rle(mask):
    m = np.concatenate([[False], np.asarray(mask, bool)]).astype(np.int8)
    change = np.nonzero(np.diff(m))[0]
    bounds = np.concatenate([[0], change, [len(mask)]])
    return np.diff(bounds).astype("<u4")


def _unrle(runs, n):
    out = np.zeros(n, bool)
    pos = 0
    val = False
    for r in runs:
        if val:
            out[pos:pos + r] = True
        pos += int(r)
        val = not val
    return out


def save_cellset(A: CellSet, path, roles=("inner", "nominal", "outer")):
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<H", VERSION))
        f.write(bytes.fromhex(A.net.net_hash))
        f.write(struct.pack("<QB", A.net.n_cells, len(roles)))
        for role in roles:
            runs = _rle(A.variant(role))
            f.write(struct.pack("<BI", _ROLES[role], len(runs)))
            f.write(runs.tobytes())


def load_cellset(path, net: Net) -> CellSet:
    with open(path, "rb") as f:
        head = f.read(6)
        if head[:4] != MAGIC:
            raise ValueError(f"{path}: not a cell set file")
        (version,) = struct.unpack("<H", head[4:])
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        h = f.read(32).hex()
        if h != net.net_hash:
            raise NetMismatch(f"{path}: saved on net {h[:12]}, current net {net.net_hash[:12]}")
        n, k = struct.unpack("<QB", f.read(9))
        masks = {}
        for _ in range(k):
            role, nr = struct.unpack("<BI", f.read(5))
            runs = np.frombuffer(f.read(4 * nr), dtype="<u4")
            masks[{v: r for r, v in _ROLES.items()}[role]] = _unrle(runs, n)
    nom = masks.get("nominal", masks.get("outer", masks.get("inner")))
    return CellSet(net, masks.get("inner", nom), nom, masks.get("outer", nom), None, False, f"file:{path}")


class CellRegion(SetRegion):
    """A stored cell set used as a region (center tests only, uncertified)."""

    def __init__(self, A: CellSet, description=None):
        super().__init__(A.net.group)
        self.A = A
        self.description = description or A.description

    def contains(self, P):
        return self.A.nominal[self.A.net.locate(P)]


__all__ = [
    "MeasureEstimate", "Net", "BoxNet", "HGridNet", "HGridKey", "LatticeNet", "SampleNet", "ReducedNet", "ReducedKey",
    "CellSet", "build_net", "discretize", "measure", "minkowski_product", "translate",
    "slice_set", "mc_measure", "save_cellset", "load_cellset", "CellRegion", "Everything",
]

"""Shape diagnostics for near-minimal-doubling sets.

fit_tube looks for a conjugate g H_d g^-1 of a catalogued subgroup that best
matches a cell set; slice_profile and ray_profile measure how evenly a set
fills rectangles and rays; scale_spectrum, covering_number and
commutator_shrink are the approximate-subgroup diagnostics.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .group_core import Group
from .measure_engine import (BoxNet, CellSet, LatticeNet, SampleNet, measure, minkowski_product,
                             slice_set)
from .subgroup_catalog import SubgroupDescriptor, maximal_subgroups


class EmptyCatalog(ValueError):
    pass


# tube fitting ------------------------------------------------------------------

@dataclass
class TubeFit:
    subgroup: SubgroupDescriptor
    conjugator: np.ndarray
    delta_prime: float
    symdiff_ratio: float
    search_trace: list = field(default_factory=list)
    tube_like: bool = True

    def __post_init__(self):
        if not 0.0 <= self.symdiff_ratio <= 2.0 + 1e-12:
            raise ValueError("symdiff ratio out of range")

    def to_dict(self):
        return {"subgroup": self.subgroup.name, "group": self.subgroup.ambient.name,
                "conjugator": [float(x) for x in np.ravel(self.conjugator)],
                "delta_prime": float(self.delta_prime), "symdiff_ratio": float(self.symdiff_ratio),
                "tube_like": self.tube_like,
                "search_trace": [[int(i), float(s)] for i, s in self.search_trace]}


def _best_delta(dist, w, inA, lo=1e-4, hi=0.5 - 1e-4):
    """Exact minimizer over delta of mu(T_delta symdiff A)/mu(T_delta).

    T_delta = cells with dist < delta. Sorting cells by distance makes the
    score a step function; every step is scanned.
    """
    order = np.argsort(dist, kind="stable")
    d = dist[order]
    wt = w[order]
    a = inA[order]
    muT = np.cumsum(wt)
    muTA = np.cumsum(wt * a)
    muA = float(np.sum(w[inA]))
    sym = muA + muT - 2 * muTA
    ok = (d > lo) & (d < hi) & (muT > 0)
    if not ok.any():
        return 2.0, lo
    score = np.where(ok, sym / np.maximum(muT, 1e-300), np.inf)
    i = int(np.argmin(score))
    # delta just above the i-th distance, below the next
    nxt = d[i + 1] if i + 1 < len(d) else d[i] + 1e-3
    return float(score[i]), float(0.5 * (d[i] + nxt))


def _score_conjugator(net, H, g, w, inA):
    G = net.group
    # g H g^-1: distance of c to it equals distance of g^-1 c g to H
    P = G.mul(G.mul(G.inv(g)[None, :], net.centers), g[None, :])
    return _best_delta(H.distance(P), w, inA)


def fit_tube(A: CellSet, catalog=None, n_candidates: int = 200, seed: int = 0,
             refine_steps: int = 40, tube_threshold: float = 0.5) -> TubeFit:
    """Best conjugate tube g H_d g^-1 over catalogued subgroups H."""
    net = A.net
    G = net.group
    if not isinstance(net, (BoxNet, LatticeNet, SampleNet)):
        raise ValueError("fit_tube needs a generic net (box, lattice or sample)")
    subs = maximal_subgroups(G) if catalog is None else list(catalog)
    if not subs:
        raise EmptyCatalog(f"no catalogued subgroup for {G.name}")
    if measure(A).upper <= 0:
        raise ValueError("empty set")
    w = net.weights
    inA = A.nominal
    rng = np.random.default_rng(seed)
    best = None
    trace = []
    for H in subs:
        if G.abelian:
            cands = G.identity()[None, :]
        else:
            cands = np.concatenate([G.identity()[None, :], G.sample(rng, n_candidates - 1)])
        scores = []
        for i, g in enumerate(cands):
            s, dl = _score_conjugator(net, H, g, w, inA)
            scores.append((s, dl))
            trace.append((i, s))
        i0 = int(np.argmin([s for s, _ in scores]))  # ties -> lowest index
        g = cands[i0]
        s, dl = scores[i0]
        if not G.abelian:
            g, s, dl = _pattern_search(net, H, g, s, dl, w, inA, refine_steps, trace, len(cands))
        if best is None or s < best[0]:
            best = (s, dl, g, H)
    s, dl, g, H = best
    s = min(max(s, 0.0), 2.0)  # cumulative sums can dip just below 0
    return TubeFit(H, g, dl, s, trace, bool(s <= tube_threshold))


def _pattern_search(net, H, g, s, dl, w, inA, steps, trace, offset):
    """Compass search over g exp(t e_i); step halves when no direction improves."""
    G = net.group
    step = 0.05
    eye = np.eye(G.dim)
    k = offset
    for _ in range(steps):
        improved = False
        for e in eye:
            for sign in (1.0, -1.0):
                cand = G.mul(g, G.exp(sign * step * e))
                sc, dc = _score_conjugator(net, H, cand, w, inA)
                trace.append((k, sc))
                k += 1
                if sc < s - 1e-12:
                    g, s, dl, improved = cand, sc, dc, True
        if not improved:
            step *= 0.5
            if step < 1e-4:
                break
    return g, s, dl


def planted_tube(net, H, g, delta, noise: float = 0.0, seed: int = 0) -> CellSet:
    """Cells of g H_delta g^-1 (center test), with a fraction of cells moved at random.

    noise = f removes round(f |A|) cells of A and adds the same number of
    random cells outside A.
    """
    G = net.group
    P = G.mul(G.mul(G.inv(g)[None, :], net.centers), g[None, :])
    mask = H.distance(P) < delta
    if noise > 0:
        rng = np.random.default_rng(seed)
        inside = np.nonzero(mask)[0]
        outside = np.nonzero(~mask)[0]
        k = int(round(noise * len(inside)))
        mask = mask.copy()
        mask[rng.choice(inside, k, replace=False)] = False
        mask[rng.choice(outside, k, replace=False)] = True
    return CellSet.from_mask(net, mask, f"planted:{H.name}:{delta:g}:{noise:g}")


def symdiff_ratio(A: CellSet, B: CellSet) -> float:
    w = A.net.weights
    return float(w[A.nominal ^ B.nominal].sum() / max(w[B.nominal].sum(), 1e-300))


# slices ------------------------------------------------------------------------

@dataclass
class SliceProfile:
    h_params: list
    lower: list
    upper: list
    evenness: float
    rho: float
    delta: float

    def to_dict(self):
        return {"h": self.h_params, "lower": self.lower, "upper": self.upper,
                "evenness": self.evenness, "rho": self.rho, "delta": self.delta}

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["h", "lower", "upper"])
            for h, lo, hi in zip(self.h_params, self.lower, self.upper):
                w.writerow([repr(h), repr(lo), repr(hi)])


def slice_profile(A: CellSet, H, delta: float, rho: float, n_h: int = 64, seed: int = 0) -> SliceProfile:
    """Measure brackets of A cap R(h, delta, rho) at n_h Haar samples of H."""
    from .inequality_suite import _check_in_tube

    _check_in_tube(A, H, delta)
    rng = np.random.default_rng(seed)
    hs = H.sample(rng, n_h)
    hp, lo, hi = [], [], []
    for h in hs:
        m = measure(slice_set(A, H, h, delta, rho))
        hp.append(float(np.ravel(H.h_param(h))[0]))
        lo.append(m.lower)
        hi.append(m.upper)
    top = max(hi)
    even = min(lo) / top if top > 0 else 0.0
    order = np.argsort(hp)
    return SliceProfile([hp[i] for i in order], [lo[i] for i in order], [hi[i] for i in order],
                        float(even), rho, delta)


def delete_cells(A: CellSet, fraction: float, seed: int = 0) -> CellSet:
    """A with a random fraction of its cells removed (uncertified result)."""
    rng = np.random.default_rng(seed)
    idx = np.nonzero(A.nominal)[0]
    k = int(round(fraction * len(idx)))
    drop = rng.choice(idx, k, replace=False)
    keep = A.nominal.copy()
    keep[drop] = False
    out = CellSet(A.net, A.inner & keep, keep, A.outer & keep | keep, None, False,
                  f"delete({A.description},{fraction:g})")
    return out


# rays ----------------------------------------------------------------------------

@dataclass
class RayProfile:
    directions: np.ndarray
    starts: np.ndarray
    lengths: np.ndarray
    densities: np.ndarray
    passed: np.ndarray
    pass_fraction: float
    rho: float

    def to_dict(self):
        return {"rho": self.rho, "pass_fraction": self.pass_fraction,
                "starts": self.starts.tolist(), "lengths": self.lengths.tolist(),
                "densities": self.densities.tolist(), "passed": self.passed.tolist()}


def _sphere(rng, n, d):
    u = rng.standard_normal((n, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def ray_profile(region, G: Group, rho: float, n_dirs: int = 500, n_t: int = 400, rho_min=None,
                eps: float = 0.1, seed: int = 0) -> RayProfile:
    """Intersections of A with rays t u, 0 <= t <= rho, in exponential coordinates.

    region is a SetRegion (or a CellSet, through its nominal cells). I(u) is the
    hull of {0} and the ray's hits, so sets away from e show density < 1.
    A direction passes when |I(u)| >= rho_min and density >= 1 - eps.
    """
    if isinstance(region, CellSet):
        from .measure_engine import CellRegion
        region = CellRegion(region)
    if rho >= G.injectivity_radius:
        raise ValueError("rays must stay inside the injectivity radius")
    rho_min = 0.5 * rho if rho_min is None else rho_min
    rng = np.random.default_rng(seed)
    U = _sphere(rng, n_dirs, G.dim)
    t = (np.arange(n_t) + 0.5) * rho / n_t
    X = U[:, None, :] * t[None, :, None]
    hit = region.contains(G.exp(X.reshape(-1, G.dim))).reshape(n_dirs, n_t)
    dt = rho / n_t
    any_hit = hit.any(1)
    if not any_hit.any():
        raise ValueError("the set misses every ray")
    last = np.where(any_hit, n_t - 1 - np.argmax(hit[:, ::-1], axis=1), -1)
    first = np.where(any_hit, np.argmax(hit, axis=1), n_t)
    length = (last + 1) * dt
    dens = np.where(length > 0, hit.sum(1) * dt / np.maximum(length, 1e-300), 0.0)
    passed = (length >= rho_min) & (dens >= 1 - eps)
    return RayProfile(U, first * dt, length, dens, passed, float(passed.mean()), rho)


# covering and scales --------------------------------------------------------------

def _inverse_mask(net, mask):
    idx = np.nonzero(mask)[0]
    out = np.zeros(net.n_cells, bool)
    out[net.locate(net.group.inv(net.centers[idx]))] = True
    return out


def _translate_mask(net, mask, g):
    idx = np.nonzero(mask)[0]
    out = np.zeros(net.n_cells, bool)
    out[net.locate(net.group.mul(g[None, :], net.centers[idx]))] = True
    return out


def _dilate_mask(net, mask, r):
    idx = np.nonzero(mask)[0]
    if isinstance(net, LatticeNet) or not len(idx):
        return _lattice_dilate(net, mask, r) if isinstance(net, LatticeNet) else mask.copy()
    return net._dilate(net.centers[idx], np.full(len(idx), r)) | mask


def _lattice_dilate(net, mask, r):
    k = int(np.ceil(r * net.group.diameter_raw * net.n)) if r > 0 else 0
    M = mask.reshape(net.shape)
    out = M.copy()
    axes = tuple(range(net.group.d))
    for shift in np.ndindex(*(2 * k + 1,) * net.group.d):
        out |= np.roll(M, tuple(s - k for s in shift), axis=axes)
    return out.ravel()


def _nominal_product(A: CellSet, B: CellSet) -> CellSet:
    net = A.net
    if not hasattr(net, "_snap_products"):
        P = minkowski_product(A, B)
        return CellSet.from_mask(net, P.nominal, P.description)
    # only the nominal cells are needed here, so skip the outer and inner passes
    na, nb = np.nonzero(A.nominal)[0], np.nonzero(B.nominal)[0]
    cells, _ = net._snap_products(na, nb, lambda i, j, m: -m)
    mask = np.zeros(net.n_cells, bool)
    mask[cells] = True
    return CellSet.from_mask(net, mask, f"({A.description})({B.description})")


@dataclass
class Covering:
    translates: list
    indices: list
    verified: bool
    bound: float
    within_bound: bool

    @property
    def size(self):
        return len(self.translates)


def covering_number(A: CellSet, B: CellSet) -> Covering:
    """Greedy maximal family F in A with fB pairwise disjoint; A within F B B^-1."""
    net = A.net
    mB = measure(B)
    if mB.upper <= 0:
        raise ValueError("B has measure zero")
    Bm = B.nominal
    Binv = CellSet.from_mask(net, _inverse_mask(net, Bm))
    BBi = _nominal_product(CellSet.from_mask(net, Bm), Binv).nominal
    occupied = np.zeros(net.n_cells, bool)
    idx = np.nonzero(A.nominal)[0]
    order = idx[np.lexsort((idx, net.group.dist_e(net.centers[idx])))]
    F, Fi = [], []
    for i in order:
        fB = _translate_mask(net, Bm, net.centers[i])
        if not (fB & occupied).any():
            F.append(net.centers[i])
            Fi.append(int(i))
            occupied |= fB
    cover = np.zeros(net.n_cells, bool)
    for f in F:
        cover |= _translate_mask(net, BBi, f)
    cover = _dilate_mask(net, cover, net.cell_radius)
    verified = bool(np.all(cover[A.nominal]))
    AB = minkowski_product(A, B)
    bound = measure(AB).upper / max(mB.lower, 1e-300) if mB.lower > 0 else np.inf
    return Covering(F, Fi, verified, float(bound), len(F) <= bound + 1e-9)


@dataclass
class ScaleSpectrum:
    radii: list
    covering_numbers: list
    K: float
    m: int
    inclusions: list
    budget_exceeded: bool = False

    def __post_init__(self):
        if any(a <= b for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError("radii must be strictly decreasing")

    def to_dict(self):
        return {"radii": self.radii, "covering_numbers": self.covering_numbers, "K": self.K,
                "m": self.m, "inclusions": self.inclusions, "budget_exceeded": self.budget_exceeded}


def _cluster_dyadic(values):
    """Merge values within a factor 2 of the running cluster maximum."""
    out = []
    for v in sorted(values, reverse=True):
        if not out or v < out[-1] / 2:
            out.append(v)
    return out


def scale_spectrum(L: CellSet, m: int = 2, K: float = 8.0) -> ScaleSpectrum:
    """Scales r_f = inf_{l in L} d(e, l f) over a greedy covering of L^m by translates L f."""
    net = L.net
    G = net.group
    sym = L.nominal | _inverse_mask(net, L.nominal)
    e_cell = int(net.locate(G.identity()[None, :])[0])
    sym[e_cell] = True
    Ls = CellSet.from_mask(net, sym, f"sym({L.description})")
    P = Ls
    for _ in range(m - 1):
        P = _nominal_product(P, Ls)
    L2 = P if m == 2 else _nominal_product(Ls, Ls)
    Lidx = np.nonzero(sym)[0]
    Lc = net.centers[Lidx]
    uncovered = P.nominal.copy()
    rf = []
    budget = K ** m
    exceeded = False
    while uncovered.any():
        idx = np.nonzero(uncovered)[0]
        f = net.centers[idx[np.argmin(G.dist_e(net.centers[idx]))]]
        rf.append(float(np.min(G.dist_e(G.mul(Lc, f[None, :])))))
        Lf = np.zeros(net.n_cells, bool)
        Lf[net.locate(G.mul(Lc, f[None, :]))] = True
        Lf = _dilate_mask(net, Lf, net.cell_radius)
        uncovered &= ~Lf
        uncovered[idx[np.argmin(G.dist_e(net.centers[idx]))]] = False
        if len(rf) > budget:
            exceeded = True
            break
    diam = float(np.max(G.dist_e(Lc)))
    floor = 2 * net.cell_radius
    radii = _cluster_dyadic([diam] + [r for r in rf if r > floor])
    radii = [float(r) for r in radii]
    covs = []
    Pidx = np.nonzero(P.nominal)[0]
    for r in radii:
        covs.append(_greedy_ball_cover(net, Pidx, r))
    covs = list(np.maximum.accumulate(covs)) if covs else []
    inclusions = []
    dP = G.dist_e(net.centers[Pidx])
    L2c = net.centers[np.nonzero(L2.nominal)[0]]
    for a, b in zip(radii, radii[1:]):
        lhs = Pidx[dP < a]
        r = b + net.cell_radius + net.radii[lhs]
        inclusions.append(_all_within(G, net.centers[lhs], L2c, r))
    return ScaleSpectrum(radii, [int(c) for c in covs], K, m, inclusions, exceeded)


def _all_within(G, P, Q, r, k=8):
    """Whether every point of P has a point of Q within distance r (r per point)."""
    if len(P) == 0:
        return True
    if len(Q) == 0:
        return False
    nq = len(Q)
    tree = cKDTree(np.concatenate(G.embed_copies(Q), axis=0))
    k = min(k, tree.n)
    _, nn = tree.query(G.embed(P), k)
    nn = nn.reshape(len(P), k) % nq
    d = G.dist(np.repeat(P, k, axis=0), Q[nn.ravel()]).reshape(len(P), k).min(1)
    # the k embedded neighbours usually settle it; search a full ball for the rest
    chord = G.chord(r) * (1 + 1e-9) + 1e-12
    for i in np.nonzero(d > r + 1e-12)[0]:
        cand = np.asarray(tree.query_ball_point(G.embed(P[i]), chord[i]), int) % nq
        if not len(cand) or G.dist(np.repeat(P[i][None, :], len(cand), 0), Q[cand]).min() > r[i] + 1e-12:
            return False
    return True


def _greedy_ball_cover(net, idx, r):
    G = net.group
    left = idx.copy()
    count = 0
    while len(left):
        c = net.centers[left[0]]
        d = G.dist(c[None, :], net.centers[left])
        left = left[d >= r]
        count += 1
    return count


# commutators -----------------------------------------------------------------------

@dataclass
class CommutatorResult:
    r_grid: list
    max_ratio: list
    r0: float
    abelian: bool


def commutator_shrink(G: Group, n_samples: int, r_grid, seed: int = 0) -> CommutatorResult:
    """Max over sampled g, h in B(e, r) of d(e, [g, h]) / d(e, g), per grid radius."""
    grid = sorted(float(r) for r in r_grid)
    rng = np.random.default_rng(seed)
    out = []
    for r in grid:
        if r >= G.injectivity_radius:
            raise ValueError("grid radius beyond the injectivity radius")
        Xg = _sphere(rng, n_samples, G.dim) * r * rng.random((n_samples, 1)) ** (1 / G.dim)
        Xh = _sphere(rng, n_samples, G.dim) * r * rng.random((n_samples, 1)) ** (1 / G.dim)
        g, h = G.exp(Xg), G.exp(Xh)
        comm = G.mul(G.mul(g, h), G.inv(G.mul(h, g)))
        dg = G.dist_e(g)
        ok = dg > 1e-12
        out.append(float(np.max(G.dist_e(comm)[ok] / dg[ok])) if ok.any() else 0.0)
    r0 = 0.0
    for r, m in zip(grid, out):
        if m < 0.5:
            r0 = r
        else:
            break
    return CommutatorResult(grid, out, r0, G.abelian)


def dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj.to_dict() if hasattr(obj, "to_dict") else obj, f, sort_keys=True, indent=1)
        f.write("\n")


__all__ = [
    "TubeFit", "fit_tube", "planted_tube", "symdiff_ratio", "SliceProfile", "slice_profile",
    "delete_cells", "RayProfile", "ray_profile", "Covering", "covering_number", "ScaleSpectrum",
    "scale_spectrum", "CommutatorResult", "commutator_shrink", "dump_json", "EmptyCatalog",
]

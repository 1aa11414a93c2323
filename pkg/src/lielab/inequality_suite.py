"""Inequality checks built on certified measure brackets.

Every check returns an InequalityReport. The verdict logic only trusts the
certified brackets: ``verified`` when lower(lhs) >= upper(rhs), ``violated``
when upper(lhs) < lower(rhs), ``inconclusive`` otherwise. Point estimates and
Monte-Carlo values are reported in a separate ``estimates`` field.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import gamma, inf, pi, sqrt

import numpy as np

from .group_core import Group
from .measure_engine import (CellSet, HGridNet, MeasureEstimate, ReducedNet, measure,
                             minkowski_product, slice_set)
from .subgroup_catalog import critical_exponent

VERIFIED, VIOLATED, INCONCLUSIVE = "verified", "violated", "inconclusive"


class NullMeasure(ValueError):
    pass


class ContainmentError(ValueError):
    pass


@dataclass(frozen=True)
class Bracket:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper + 1e-15:
            raise ValueError(f"inverted bracket [{self.lower}, {self.upper}]")

    @classmethod
    def of(cls, m: MeasureEstimate):
        return cls(m.lower, m.upper)

    @property
    def mid(self):
        if self.upper == inf:
            return inf
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, x, slack=0.0):
        return self.lower - slack <= x <= self.upper + slack

    def __mul__(self, c):
        c = float(c)
        lo, hi = self.lower * c, self.upper * c
        return Bracket(min(lo, hi), max(lo, hi))

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, Bracket):
            return Bracket(self.lower + other.lower, self.upper + other.upper)
        return Bracket(self.lower + other, self.upper + other)

    def power(self, p):
        return Bracket(self.lower ** p, self.upper ** p)

    def cap(self, c):
        return Bracket(min(self.lower, c), min(self.upper, c))

    def to_list(self):
        return [_num(self.lower), _num(self.upper)]


def _num(x):
    return None if x is None else ("inf" if x == inf else float(x))


def verdict_ge(lhs: Bracket, rhs: Bracket) -> str:
    """Verdict for the claim lhs >= rhs."""
    if lhs.lower >= rhs.upper:
        return VERIFIED
    if lhs.upper < rhs.lower:
        return VIOLATED
    return INCONCLUSIVE


def combine(verdicts) -> str:
    verdicts = list(verdicts)
    if VIOLATED in verdicts:
        return VIOLATED
    if all(v == VERIFIED for v in verdicts):
        return VERIFIED
    return INCONCLUSIVE


@dataclass
class InequalityReport:
    name: str
    inputs: dict
    lhs: Bracket
    rhs: Bracket
    verdict: str
    fitted_constants: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    net_hash: str | None = None
    seed: int | None = None
    runtime_ms: float = 0.0
    notes: list = field(default_factory=list)

    def to_dict(self, timing=False):
        d = {
            "name": self.name,
            "inputs": self.inputs,
            "lhs": self.lhs.to_list(),
            "rhs": self.rhs.to_list(),
            "verdict": self.verdict,
            "fitted_constants": {k: _clean(v) for k, v in self.fitted_constants.items()},
            "estimates": {k: _clean(v) for k, v in self.estimates.items()},
            "net_hash": self.net_hash,
            "seed": self.seed,
            "notes": list(self.notes),
        }
        if timing:
            d["runtime_ms"] = self.runtime_ms
        return d


def _clean(v):
    if isinstance(v, Bracket):
        return v.to_list()
    if isinstance(v, MeasureEstimate):
        return v.to_dict()
    if isinstance(v, (np.floating, float)):
        return _num(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    return v


class _Timer:
    def __enter__(self):
        self.t = time.perf_counter()
        return self

    def __exit__(self, *a):
        self.ms = 1000 * (time.perf_counter() - self.t)


def _ratio(num: Bracket, den: Bracket) -> Bracket:
    if den.upper <= 0:
        raise NullMeasure("denominator has measure zero")
    lo = num.lower / den.upper
    hi = num.upper / den.lower if den.lower > 0 else inf
    return Bracket(lo, hi)


def _certified(*sets):
    return all(A.certified for A in sets)


def _net_hash(A: CellSet):
    return A.net.net_hash


# doubling -----------------------------------------------------------------

def doubling_ratio(A: CellSet, A2: CellSet | None = None) -> Bracket:
    """[lower(mu(A^2))/upper(mu(A)), upper(mu(A^2))/lower(mu(A))]."""
    mA = measure(A)
    if mA.upper <= 0:
        raise NullMeasure(f"{A.description} has measure zero")
    A2 = minkowski_product(A, A) if A2 is None else A2
    return _ratio(Bracket.of(measure(A2)), Bracket.of(mA))


def default_doubling_constant(k: int) -> float:
    """Reference C used for the verdict when the caller gives none."""
    return float(2 ** (k + 1))


def check_minimal_doubling(A: CellSet, G: Group | None = None, C: float | None = None,
                           k: int | None = None, seed=None) -> InequalityReport:
    """mu(A^2) >= (2^k - C mu(A)^(2/k)) mu(A), k the critical exponent."""
    G = A.net.group if G is None else G
    with _Timer() as t:
        k = critical_exponent(G) if k is None else k
        C = default_doubling_constant(k) if C is None else float(C)
        mA = Bracket.of(measure(A))
        A2 = minkowski_product(A, A)
        m2 = Bracket.of(measure(A2))
        # rhs is increasing in mu(A) while 2^k - C mu^(2/k) > 0
        f = lambda m: max(0.0, 2 ** k - C * m ** (2 / k)) * m
        grid = np.linspace(mA.lower, mA.upper, 65)
        vals = [f(m) for m in grid]
        rhs = Bracket(min(vals), max(vals))
        verdict = verdict_ge(m2, rhs)
        ratio = _ratio(m2, mA) if mA.upper > 0 else Bracket(0.0, inf)
        fc = {"k": k, "C_reference": C, "doubling_ratio": ratio}
        if mA.lower > 0:
            # C needed: (2^k - ratio)/mu^(2/k); certified-sufficient value uses the worst ends
            c_hi = (2 ** k - ratio.lower) / mA.lower ** (2 / k)
            c_lo = (2 ** k - ratio.upper) / mA.upper ** (2 / k)
            fc["C_bracket"] = Bracket(min(c_lo, c_hi), max(c_lo, c_hi))
            fc["C_empirical"] = max(0.0, c_hi)
            fc["C_raw"] = c_hi
        est = {}
        mA_n, m2_n = measure(A).estimate, measure(A2).estimate
        if mA_n:
            est["doubling_nominal"] = m2_n / mA_n
    return InequalityReport(
        "minimal_doubling", {"A": A.description, "group": G.name}, m2, rhs, verdict, fc, est,
        _net_hash(A), seed, t.ms,
        [] if _certified(A) else ["uncertified input bracket"])


# Brunn-Minkowski ---------------------------------------------------------------

def _bm_sum(mA: Bracket, mB: Bracket, k: float) -> Bracket:
    return Bracket(mA.lower ** (1 / k) + mB.lower ** (1 / k), mA.upper ** (1 / k) + mB.upper ** (1 / k))


def check_brunn_minkowski(A: CellSet, B: CellSet, k: float, alpha: float = 0.05,
                          AB: CellSet | None = None, seed=None) -> InequalityReport:
    """mu(AB)^(1/k) >= (1 - alpha)(mu(A)^(1/k) + mu(B)^(1/k)), capped at 1."""
    if k < 1:
        raise ValueError("k must be at least 1")
    with _Timer() as t:
        mA, mB = Bracket.of(measure(A)), Bracket.of(measure(B))
        AB = minkowski_product(A, B) if AB is None else AB
        mAB = Bracket.of(measure(AB))
        lhs = mAB.power(1 / k)
        s = _bm_sum(mA, mB, k)
        rhs = ((1 - alpha) * s).cap(1.0)
        verdict = verdict_ge(lhs, rhs)
        fc = {"k": k, "alpha_reference": alpha}
        if s.upper > 0:
            # alpha such that lhs >= (1 - alpha) s holds for sure; 0 when the cap at 1 is active
            a_cert = 1 - lhs.lower / min(s.upper, 1.0) if s.upper < 1 else 1 - lhs.lower
            a_best = 1 - lhs.upper / max(s.lower, 1e-300) if s.lower > 0 else -inf
            fc["alpha_empirical"] = max(0.0, a_cert)
            fc["alpha_bracket"] = Bracket(min(a_best, a_cert), a_cert)
        est = {}
        e = [measure(X).estimate for X in (A, B, AB)]
        if all(x is not None for x in e) and e[0] + e[1] > 0:
            est["alpha_nominal"] = 1 - e[2] ** (1 / k) / (e[0] ** (1 / k) + e[1] ** (1 / k))
    return InequalityReport(
        "brunn_minkowski", {"A": A.description, "B": B.description, "k": k}, lhs, rhs, verdict, fc,
        est, _net_hash(A), seed, t.ms, [] if _certified(A, B) else ["uncertified input bracket"])


def _check_in_ball(A: CellSet, rho: float):
    net = A.net
    G = net.group
    idx = np.nonzero(A.nominal)[0]
    if len(idx) == 0:
        return
    if isinstance(net, ReducedNet):
        if net.key.kind != "class":
            raise ContainmentError("local BM needs sets given around e")
        far = net.edges[idx] > rho + 1e-12
    elif isinstance(net, HGridNet):
        raise ContainmentError("local BM needs sets given around e")
    else:
        far = G.dist_e(net.centers[idx]) - net.radii[idx] > rho + 1e-12
    if np.any(far):
        raise ContainmentError(f"{A.description} leaves the ball B(e, {rho})")


def check_local_bm(A: CellSet, B: CellSet, rho: float, AB: CellSet | None = None,
                   seed=None, eps: float = 0.0) -> InequalityReport:
    """mu(AB)^(1/d) >= (1 - eps)(mu(A)^(1/d) + mu(B)^(1/d)) for A, B in B(e, rho).

    The verdict is for the given eps (default 0, the Euclidean inequality);
    eps_empirical is the deficit actually observed.
    """
    if rho > 0.2:
        raise ContainmentError("local BM is checked for rho <= 0.2")
    _check_in_ball(A, rho)
    _check_in_ball(B, rho)
    d = A.net.group.dim
    with _Timer() as t:
        mA, mB = Bracket.of(measure(A)), Bracket.of(measure(B))
        AB = minkowski_product(A, B) if AB is None else AB
        lhs = Bracket.of(measure(AB)).power(1 / d)
        s = _bm_sum(mA, mB, d)
        verdict = verdict_ge(lhs, (1 - eps) * s)
        fc = {"d": d, "rho": rho, "eps_reference": eps}
        if s.lower > 0:
            lo = 1 - lhs.upper / s.lower
            hi = 1 - lhs.lower / s.upper
            fc["eps_bracket"] = Bracket(min(lo, hi), max(lo, hi))
            fc["eps_empirical"] = 0.5 * (lo + hi)
    return InequalityReport(
        "local_bm", {"A": A.description, "B": B.description, "rho": rho}, lhs, (1 - eps) * s, verdict, fc, {},
        _net_hash(A), seed, t.ms, [] if _certified(A, B) else ["uncertified input bracket"])


def fit_power_law(x, y, weights=None):
    """Least-squares fit of log y = log C + p log x; returns (C, p, stderr_p)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, float)
    X = np.stack([np.ones_like(x), np.log(x)], 1)
    W = np.sqrt(w)[:, None]
    coef, res, _, _ = np.linalg.lstsq(X * W, np.log(y) * W[:, 0], rcond=None)
    se = inf
    if len(x) > 2:
        r = (np.log(y) - X @ coef) * np.sqrt(w)
        s2 = float(r @ r) / (len(x) - 2)
        cov = s2 * np.linalg.inv((X * W).T @ (X * W))
        se = sqrt(max(cov[1, 1], 0.0))
    return float(np.exp(coef[0])), float(coef[1]), se


def local_bm_sweep(make_pair, rhos, max_rel_width: float = 0.5):
    """Run check_local_bm for each rho and fit eps ~ C rho^p.

    make_pair(rho) returns (A, B) cell sets. Points whose eps bracket is wider
    than max_rel_width times its midpoint (discretization dominated) or whose
    midpoint is not positive are excluded from the fit.
    """
    reports, xs, ys, used = [], [], [], []
    for rho in rhos:
        A, B = make_pair(rho)
        r = check_local_bm(A, B, rho)
        reports.append(r)
        eb = r.fitted_constants.get("eps_bracket")
        ok = eb is not None and eb.mid > 0 and eb.width <= max_rel_width * eb.mid
        used.append(bool(ok))
        if ok:
            xs.append(rho)
            ys.append(eb.mid)
    fit = {"used": used}
    if len(xs) >= 2:
        C, p, se = fit_power_law(xs, ys)
        fit.update({"C": C, "p": p, "p_stderr": se})
    return reports, fit


# Kemperman ---------------------------------------------------------------------

def kemperman_check(A: CellSet, B: CellSet, AB: CellSet | None = None, seed=None) -> InequalityReport:
    """mu(AB) >= min(mu(A) + mu(B), 1) on a connected compact group."""
    with _Timer() as t:
        mA, mB = Bracket.of(measure(A)), Bracket.of(measure(B))
        AB = minkowski_product(A, B) if AB is None else AB
        lhs = Bracket.of(measure(AB))
        rhs = (mA + mB).cap(1.0)
        verdict = verdict_ge(lhs, rhs)
        fc = {"slack_lower": lhs.lower - rhs.upper}
    return InequalityReport(
        "kemperman", {"A": A.description, "B": B.description}, lhs, rhs, verdict, fc, {},
        _net_hash(A), seed, t.ms, [] if _certified(A, B) else ["uncertified input bracket"])


# ball growth ---------------------------------------------------------------------

def _unit_ball(rng, n, d):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((n, 1)) ** (1 / d)


@dataclass
class BallCurve:
    group: str
    rhos: list
    ratios: list
    stderr: list
    S: float
    S_stderr: float
    S_ci95: tuple
    base: float
    n_samples: int
    seed: int

    def to_dict(self):
        return {"group": self.group, "rhos": self.rhos, "ratios": self.ratios, "stderr": self.stderr,
                "S": self.S, "S_stderr": self.S_stderr, "S_ci95": list(self.S_ci95),
                "base": self.base, "n_samples": self.n_samples, "seed": self.seed}


def ball_ratio(G: Group, rho: float, n: int, rng) -> tuple[float, float]:
    """mu(B_2rho)/mu(B_rho) from the Haar density in exponential coordinates.

    mu(B_r) is proportional to r^d E[H(rU)] with U uniform in the unit ball,
    so the ratio is 2^d E[H(2 rho U)] / E[H(rho U)]; both expectations use the
    same U. Returns (ratio, delta-method standard error).
    """
    if 2 * rho >= G.injectivity_radius:
        raise ValueError("2 rho must stay inside the injectivity radius")
    d = G.dim
    U = _unit_ball(rng, n, d)
    h1 = G.haar_density(rho * U)
    h2 = G.haar_density(2 * rho * U)
    m1, m2 = h1.mean(), h2.mean()
    r = m2 / m1
    cov = np.cov(np.stack([h2, h1]))
    var = (cov[0, 0] / m1 ** 2 - 2 * r * cov[0, 1] / m1 ** 2 + r ** 2 * cov[1, 1] / m1 ** 2) / n
    return float(2 ** d * r), float(2 ** d * sqrt(max(var, 0.0)))


def ball_doubling_curve(G: Group, rho_list, n_samples: int = 200_000, seed: int = 0) -> BallCurve:
    """Fit ratio = 2^d (1 - S rho^2) by weighted least squares through the origin."""
    rhos = [float(r) for r in rho_list]
    if not rhos or max(rhos) > 0.2:
        raise ValueError("rho_list must be nonempty with max <= 0.2")
    rng = np.random.default_rng(seed)
    base = float(2 ** G.dim)
    ratios, errs = [], []
    for r in rhos:
        v, e = ball_ratio(G, r, n_samples, rng)
        ratios.append(v)
        errs.append(e)
    x = np.asarray(rhos) ** 2
    y = 1 - np.asarray(ratios) / base
    sig = np.maximum(np.asarray(errs) / base, 1e-15)
    w = 1 / sig ** 2
    S = float(np.sum(w * x * y) / np.sum(w * x * x))
    se = float(1 / sqrt(np.sum(w * x * x)))
    if G.abelian:
        se = max(se, 0.0)
    return BallCurve(G.name, rhos, ratios, errs, S, se, (S - 1.96 * se, S + 1.96 * se), base,
                     n_samples, seed)


def so3_ball_measure(r):
    """Exact normalized Haar measure of B(e, r) in SO3 (diameter-1 metric)."""
    th = pi * np.asarray(r, float)
    return (th - np.sin(th)) / pi


# double counting -----------------------------------------------------------------

def subgroup_ball_measure(H, rho: float) -> float:
    """mu_H(B_H(e, rho)) in the H-coordinate used by rectangles."""
    A = H.diameter_h
    if rho >= A:
        return 1.0
    k = H.dim_h
    if k == 1:
        return rho / A
    # ball in a k-dimensional box (-A, A]^k, valid while rho <= A
    return pi ** (k / 2) / gamma(k / 2 + 1) * rho ** k / (2 * A) ** k


def _check_in_tube(X: CellSet, H, delta):
    net = X.net
    idx = np.nonzero(X.nominal)[0]
    if len(idx) == 0:
        return
    if isinstance(net, HGridNet):
        bad = net.v_edges[idx // net.na] >= delta
    elif isinstance(net, ReducedNet):
        bad = net.edges[idx] >= delta
    else:
        bad = H.distance(net.centers[idx]) - net.radii[idx] >= delta
    if np.any(bad):
        raise ContainmentError(f"{X.description} leaves the tube of width {delta}")


def double_counting_check(X: CellSet, H, delta: float, rho: float, n_h: int = 500,
                          seed: int = 0) -> InequalityReport:
    """Integral over H of mu(X cap R(h, delta, rho)) against mu(X) mu_H(B_H(e, rho))."""
    _check_in_tube(X, H, delta)
    rng = np.random.default_rng(seed)
    with _Timer() as t:
        hs = H.sample(rng, n_h)
        lo = np.empty(n_h)
        hi = np.empty(n_h)
        for i in range(n_h):
            m = measure(slice_set(X, H, hs[i], delta, rho))
            lo[i], hi[i] = m.lower, m.upper
        mids = 0.5 * (lo + hi)
        lhs = Bracket(float(lo.mean()), float(hi.mean()))
        sigma = float(mids.std(ddof=1) / sqrt(n_h)) if n_h > 1 else 0.0
        mb = subgroup_ball_measure(H, rho)
        rhs = Bracket.of(measure(X)) * mb
        diff = abs(lhs.mid - rhs.mid)
        tol = 3 * sigma + lhs.width + rhs.width
        ok = diff <= tol
        fc = {"mu_H_ball": mb, "sigma": sigma, "difference": diff, "tolerance": tol}
    return InequalityReport(
        "double_counting", {"X": X.description, "H": H.name, "delta": delta, "rho": rho, "n_h": n_h},
        lhs, rhs, VERIFIED if ok else VIOLATED, fc, {"lhs_mc": lhs.mid}, _net_hash(X), seed, t.ms,
        ["pass means |lhs - rhs| <= 3 sigma + bracket widths"])


# near a subgroup -----------------------------------------------------------------

def near_subgroup_expansion_check(A: CellSet, B: CellSet, H, delta: float, alpha: float = 0.05,
                                  eps: float | None = None, seed=None) -> InequalityReport:
    """Expansion and BM inequalities for sets inside a tube around H.

    Checks mu(AB) >= (2^k - eps) min(mu(A), mu(B)) and
    mu(AB)^(1/k) >= (1 - alpha)(mu(A)^(1/k) + mu(B)^(1/k)), k = codim H.
    Also compares the slice-BM value at c = (mu(B)/mu(A))^(1/k) against c = 1.
    """
    _check_in_tube(A, H, delta)
    _check_in_tube(B, H, delta)
    k = H.codim
    eps = 2 ** k * 0.05 if eps is None else eps
    with _Timer() as t:
        mA, mB = Bracket.of(measure(A)), Bracket.of(measure(B))
        AB = minkowski_product(A, B)
        mAB = Bracket.of(measure(AB))
        if np.any(AB.nominal):
            try:
                _check_in_tube(AB, H, 2 * delta + 1e-12)
            except ContainmentError:
                pass
        mn = Bracket(min(mA.lower, mB.lower), min(mA.upper, mB.upper))
        rhs1 = mn * (2 ** k - eps)
        v1 = verdict_ge(mAB, rhs1)
        lhs2 = mAB.power(1 / k)
        rhs2 = (1 - alpha) * _bm_sum(mA, mB, k)
        v2 = verdict_ge(lhs2, rhs2)
        fc = {"k": k, "eps_reference": eps, "alpha_reference": alpha}
        if mn.lower > 0:
            fc["expansion_ratio"] = Bracket(mAB.lower / mn.upper, mAB.upper / mn.lower)
        # slice model: pairing A-slices at scale rho with B-slices at scale c rho
        if mA.mid > 0 and mB.mid > 0:
            c_opt = (mB.mid / mA.mid) ** (1 / k)
            fc["c_optimal"] = c_opt
            fc["bm_value_c_opt"] = _slice_bm_value(mA.mid, mB.mid, k, c_opt)
            fc["bm_value_c_one"] = _slice_bm_value(mA.mid, mB.mid, k, 1.0)
            fc["c_opt_not_worse"] = bool(fc["bm_value_c_opt"] >= fc["bm_value_c_one"] - 1e-12)
        if mn.upper > 0 and mn.lower > 0:
            fc["eps_empirical"] = max(0.0, 2 ** k - mAB.lower / mn.upper)
        s = _bm_sum(mA, mB, k)
        if s.upper > 0:
            fc["alpha_empirical"] = max(0.0, 1 - lhs2.lower / s.upper)
    verdict = combine([v1, v2])
    if fc.get("c_opt_not_worse") is False:
        verdict = VIOLATED
    return InequalityReport(
        "near_subgroup_expansion", {"A": A.description, "B": B.description, "H": H.name, "delta": delta},
        mAB, rhs1, verdict, fc, {"expansion_verdict": v1, "bm_verdict": v2}, _net_hash(A), seed, t.ms,
        [] if _certified(A, B) else ["uncertified input bracket"])


def _slice_bm_value(a: float, b: float, k: int, c: float) -> float:
    """Slice-model bound min(a, b / c^k)^(1/k) (1 + c) for mu(AB)^(1/k).

    Evenly spread sets with masses a, b paired at relative scale c. The
    maximum over c sits at c = (b/a)^(1/k) and equals a^(1/k) + b^(1/k).
    """
    return min(a, b / c ** k) ** (1 / k) * (1 + c)


__all__ = [
    "Bracket", "InequalityReport", "VERIFIED", "VIOLATED", "INCONCLUSIVE", "verdict_ge", "combine",
    "doubling_ratio", "check_minimal_doubling", "check_brunn_minkowski", "check_local_bm",
    "local_bm_sweep", "fit_power_law", "kemperman_check", "ball_ratio", "ball_doubling_curve",
    "BallCurve", "so3_ball_measure", "double_counting_check", "subgroup_ball_measure",
    "near_subgroup_expansion_check", "NullMeasure", "ContainmentError", "default_doubling_constant",
]

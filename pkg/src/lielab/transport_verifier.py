"""Discrete optimal transport in the Lie algebra and the local BM mechanism.

Exact plans for uniform clouds of equal size come from a linear assignment
solve; general weights use the transport LP (HiGHS) while it is small, and
log-domain Sinkhorn with epsilon scaling beyond that. Every plan carries dual
potentials (u, v) with u_i + v_j <= C_ij, which certify optimality through
the duality gap.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from math import factorial, gamma, pi

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .group_core import Group


class InfeasibleWeights(ValueError):
    pass


class DegenerateCloud(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    weights: np.ndarray | None = None
    radius: float | None = None
    volume: float | None = None  # Lebesgue measure of the set the cloud samples, if known

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))
        n = len(self.points)
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        self.weights = np.asarray(self.weights, float)
        if self.weights.shape != (n,) or np.any(self.weights < 0):
            raise InfeasibleWeights("weights must be nonnegative, one per point")
        if abs(self.weights.sum() - 1) > 1e-9:
            raise InfeasibleWeights(f"weights sum to {self.weights.sum()}, not 1")
        r = float(np.max(np.linalg.norm(self.points, axis=1))) if n else 0.0
        if self.radius is None:
            self.radius = r
        elif r > self.radius * (1 + 1e-12):
            raise ValueError(f"points reach {r}, beyond the recorded radius {self.radius}")

    @property
    def n(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def uniform(self):
        return np.allclose(self.weights, 1.0 / self.n, rtol=0, atol=1e-15)


@dataclass
class TransportPlan:
    source: PointCloud
    target: PointCloud
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost: float
    u: np.ndarray
    v: np.ndarray
    method: str
    certificate: dict = field(default_factory=dict)

    def dense(self):
        return coo_matrix((self.mass, (self.rows, self.cols)),
                          shape=(self.source.n, self.target.n)).toarray()

    def image(self):
        """Barycentric image T(x_i) of every source point."""
        out = np.zeros_like(self.source.points)
        np.add.at(out, self.rows, self.mass[:, None] * self.target.points[self.cols])
        w = np.bincount(self.rows, weights=self.mass, minlength=self.source.n)
        return out / np.maximum(w, 1e-300)[:, None]

    def marginal_error(self):
        a = np.bincount(self.rows, weights=self.mass, minlength=self.source.n)
        b = np.bincount(self.cols, weights=self.mass, minlength=self.target.n)
        return float(max(np.abs(a - self.source.weights).max(), np.abs(b - self.target.weights).max()))


def sq_cost(X, Y):
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    C = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2 * X @ Y.T
    return np.maximum(C, 0.0)


def _certify(C, plan_cost, u, v, a, b):
    viol = float(np.max(u[:, None] + v[None, :] - C))
    dual = float(a @ u + b @ v)
    gap = plan_cost - dual
    return {"max_dual_violation": max(viol, 0.0), "dual_value": dual, "duality_gap": gap,
            "relative_gap": gap / max(abs(plan_cost), 1e-300)}


def _assignment_duals(C, col_of_row, max_iter=None):
    """Potentials for an optimal assignment by Bellman-Ford on row potentials.

    We need u_k - u_i <= C[k, s(i)] - C[i, s(i)] for all i, k, where s is the
    assignment; shortest-path distances from a virtual source satisfy this.
    Then v_j = C[i, j] - u_i for the row i assigned to j.
    """
    n = C.shape[0]
    s = col_of_row
    W = C[:, s].T - C[np.arange(n), s][:, None]  # W[i, k] = C[k, s(i)] - C[i, s(i)]
    u = np.zeros(n)
    for _ in range(max_iter or n + 1):
        nu = np.minimum(u, (u[:, None] + W).min(axis=0))
        if np.array_equal(nu, u):
            break
        u = nu
    else:
        raise RuntimeError("negative cycle: assignment is not optimal")
    v = np.empty(n)
    v[s] = C[np.arange(n), s] - u
    return u, v


def _solve_lp(C, a, b):
    n, m = C.shape
    rows = np.concatenate([np.repeat(np.arange(n), m), n + np.tile(np.arange(m), n)])
    cols = np.concatenate([np.arange(n * m), np.arange(n * m)])
    A = coo_matrix((np.ones(2 * n * m), (rows, cols)), shape=(n + m, n * m)).tocsr()
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleWeights(res.message)
    P = res.x.reshape(n, m)
    duals = res.eqlin.marginals
    return P, duals[:n], duals[n:]


def _sinkhorn(C, a, b, eps_final, n_scales=8, iters=200):
    """Log-domain Sinkhorn with geometric epsilon scaling."""
    scale = max(float(C.max()), 1e-12)
    eps_list = np.geomspace(scale, eps_final, n_scales)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    la, lb = np.log(a), np.log(b)
    for eps in eps_list:
        for _ in range(iters):
            f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
            g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
    P = np.exp((f[:, None] + g[None, :] - C) / eps_list[-1] + la[:, None] + lb[None, :])
    return P, f, g


def solve_ot(source: PointCloud, target: PointCloud, mode: str = "auto",
             entropic_eps: float = 1e-3) -> TransportPlan:
    """Optimal coupling for the squared Euclidean cost."""
    C = sq_cost(source.points, target.points)
    a, b = source.weights, target.weights
    big = max(source.n, target.n) > 2000
    if mode == "auto":
        if not big and source.uniform and target.uniform and source.n == target.n:
            mode = "assignment"
        elif source.n * target.n <= 250_000:
            mode = "lp"
        else:
            mode = "entropic"
    if mode == "assignment":
        r, c = linear_sum_assignment(C)
        s = np.empty(source.n, int)
        s[r] = c
        # potentials of the assignment are also LP potentials for weights 1/n
        u, v = _assignment_duals(C, s)
        rows, cols = r, c
        mass = np.full(len(r), 1.0 / source.n)
        cost = float(C[r, c].sum() / source.n)
        cert = _certify(C, cost, u, v, a, b)
    elif mode == "lp":
        P, u, v = _solve_lp(C, a, b)
        rows, cols = np.nonzero(P > 1e-14)
        mass = P[rows, cols]
        cost = float((C * P).sum())
        cert = _certify(C, cost, u, v, a, b)
    elif mode == "entropic":
        P, u, v = _sinkhorn(C, a, b, entropic_eps * max(float(C.mean()), 1e-12))
        rows, cols = np.nonzero(P > 1e-14)
        mass = P[rows, cols]
        cost = float((C * P).sum())
        # shift potentials so that they are feasible
        u = u - max(0.0, float(np.max(u[:, None] + v[None, :] - C)))
        cert = _certify(C, cost, u, v, a, b)
        cert["entropic_eps"] = entropic_eps
    else:
        raise ValueError(f"unknown mode {mode}")
    plan = TransportPlan(source, target, np.asarray(rows), np.asarray(cols), np.asarray(mass), cost,
                         u, v, mode, cert)
    plan.certificate["marginal_error"] = plan.marginal_error()
    return plan


def brute_force_cost(X, Y):
    """Minimum over all permutations of the mean squared cost (n <= 8)."""
    import itertools

    n = len(X)
    if n > 8:
        raise ValueError("brute force is limited to n <= 8")
    C = sq_cost(X, Y)
    best = np.inf
    for p in itertools.permutations(range(n)):
        best = min(best, C[np.arange(n), p].sum())
    return best / n


def permutation_count(n):
    return factorial(n)


# monotonicity -----------------------------------------------------------------------

@dataclass
class MonotonicityResult:
    passed: bool
    worst: float
    cycles_checked: int


def check_cyclical_monotonicity(plan: TransportPlan, cycle_len: int = 3, n_cycles: int = 10_000,
                                seed: int = 0, tol: float = 1e-8) -> MonotonicityResult:
    """Sum_k <x_k, y_k - y_{k+1}> >= 0 on sampled support cycles (all pairs when small)."""
    if not 2 <= cycle_len <= 3:
        raise ValueError("cycle_len must be 2 or 3")
    X = plan.source.points[plan.rows]
    Y = plan.target.points[plan.cols]
    m = len(X)
    worst = 0.0
    count = 0
    rng = np.random.default_rng(seed)
    for L in range(2, cycle_len + 1):
        if m < L:
            continue
        if L == 2 and m * (m - 1) // 2 <= n_cycles:
            i, j = np.triu_indices(m, 1)
            idx = np.stack([i, j], 1)
        else:
            idx = np.stack([rng.choice(m, L, replace=False) for _ in range(n_cycles)])
        Xs = X[idx]
        Ys = Y[idx]
        Yn = np.roll(Ys, -1, axis=1)
        s = np.einsum("nkd,nkd->n", Xs, Ys - Yn)
        scale = 1 + np.einsum("nkd,nkd->n", Xs, Xs)
        worst = min(worst, float(np.min(s / scale)))
        count += len(idx)
    return MonotonicityResult(worst >= -tol, worst, count)


# Monge-Ampere ------------------------------------------------------------------------

@dataclass
class RatioReport:
    median_ratio: float
    expected: float | None
    relative_error: float | None
    passed: bool | None
    k: int
    n: int


def monge_ampere_ratio_check(plan: TransportPlan, k_nn: int = 20, expected: float | None = None,
                             tol: float = 0.25) -> RatioReport:
    """Median of (r_k at T(x) in the target / r_k at x in the source)^d."""
    src, tgt = plan.source.points, plan.target.points
    d = src.shape[1]
    if len(np.unique(src, axis=0)) < len(src) or len(np.unique(tgt, axis=0)) < len(tgt):
        raise DegenerateCloud("duplicated points make k-NN radii vanish")
    T = plan.image()
    rs = cKDTree(src).query(src, k_nn + 1)[0][:, -1]
    rt = cKDTree(tgt).query(T, k_nn)[0][:, -1]
    ratio = (rt / rs) ** d
    med = float(np.median(ratio))
    if expected is None and plan.source.volume and plan.target.volume:
        expected = plan.target.volume / plan.source.volume
    rel = None if expected is None else abs(med - expected) / expected
    return RatioReport(med, expected, rel, None if rel is None else rel <= tol, k_nn, len(src))


# group map F = id . T ---------------------------------------------------------------

@dataclass
class GroupBMReport:
    c_fit: float
    rho: float
    expansion_pairs: int
    measure_estimate: float | None
    bm_rhs: float | None
    c_prime: float | None
    passed: bool
    skipped: bool = False
    notes: list = field(default_factory=list)


def group_bm_map(plan: TransportPlan, G: Group, n_pairs: int = 20_000, seed: int = 0,
                 n_mc: int = 200_000, c_ref: float = 10.0) -> GroupBMReport:
    """F(x) = log(exp(x) exp(T(x))) and its expansion and measure lower bounds."""
    X = plan.source.points
    rho = max(plan.source.radius, plan.target.radius)
    if rho > 0.15:
        raise ValueError("clouds must lie within radius 0.15 of 0")
    if X.shape[1] != G.dim:
        raise ValueError("cloud dimension does not match the group")
    T = plan.image()
    F = G.log(G.mul(G.exp(X), G.exp(T)))
    n = len(X)
    if n < 2 or len(np.unique(np.round(F, 12), axis=0)) < 2:
        return GroupBMReport(0.0, rho, 0, None, None, None, True, True, ["degenerate image, skipped"])
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n, n_pairs)
    keep = np.linalg.norm(X[i] - X[j], axis=1) > 1e-12
    i, j = i[keep], j[keep]
    ratio = np.linalg.norm(F[i] - F[j], axis=1) / np.linalg.norm(X[i] - X[j], axis=1)
    c_fit = max(0.0, 1 - float(ratio.min()))
    out = GroupBMReport(c_fit, rho, len(i), None, None, None, True)
    vA, vB = plan.source.volume, plan.target.volume
    if vA and vB:
        d = G.dim
        # thicken F(support) by the cloud resolution and integrate the Haar density over it
        tree = cKDTree(F)
        r = float(np.quantile(tree.query(F, 2)[0][:, 1], 0.95))
        lo, hi = F.min(0) - r, F.max(0) + r
        box = float(np.prod(hi - lo))
        Z = lo + (hi - lo) * rng.random((n_mc, d))
        hit = tree.query(Z, 1)[0] <= r
        dens = np.zeros(n_mc)
        if hit.any():
            dens[hit] = G.haar_density(Z[hit])
        mu = box * float(dens.mean())
        rhs = (vA ** (1 / d) + vB ** (1 / d)) ** d
        cp = max(0.0, 1 - mu / rhs) / rho ** 2
        out.measure_estimate, out.bm_rhs, out.c_prime = mu, rhs, cp
        out.passed = cp <= c_ref
    return out


# AM-GM ------------------------------------------------------------------------------

@dataclass
class AMGMReport:
    d: int
    n_trials: int
    rho: float
    violations: int
    c_fit: float
    passed: bool
    worst_ratio: float


def jacobian_amgm_check(d: int, n_trials: int, rho: float, seed: int = 0, perturb: bool = True,
                        c_ref: float | None = None) -> AMGMReport:
    """det(I + M + S + E) >= (1 - c rho^2)(1 + det(M)^(1/d))^d over random draws.

    M symmetric positive definite (eigenvalues in [0.1, 10]), S skew with
    Frobenius norm <= rho, E entries in [-rho^2, rho^2]. Without perturbation
    the claim is exact AM-GM (c = 0); violations are counted against c = 0
    there and against c_ref (default 5) otherwise.
    """
    if d > 6:
        raise ValueError("d must be at most 6")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n_trials, d, d)))
    lam = rng.uniform(0.1, 10.0, (n_trials, d))
    M = np.einsum("nij,nj,nkj->nik", Q, lam, Q)
    A = np.eye(d) + M
    if perturb:
        S = rng.standard_normal((n_trials, d, d))
        S = S - np.swapaxes(S, 1, 2)
        S *= (rho * rng.random((n_trials, 1, 1))) / np.linalg.norm(S, axis=(1, 2), keepdims=True)
        E = rng.uniform(-rho ** 2, rho ** 2, (n_trials, d, d))
        A = A + S + E
    lhs = np.linalg.det(A)
    rhs = (1 + np.prod(lam, axis=1) ** (1 / d)) ** d
    ratio = lhs / rhs
    c_fit = max(0.0, float((1 - ratio.min()) / rho ** 2)) if rho > 0 else 0.0
    if not perturb:
        violations = int(np.sum(ratio < 1 - 1e-12))
    else:
        c_ref = 5.0 if c_ref is None else c_ref
        violations = int(np.sum(ratio < 1 - c_ref * rho ** 2))
    return AMGMReport(d, n_trials, rho, violations, c_fit, violations == 0, float(ratio.min()))


# CSV ---------------------------------------------------------------------------------

def write_cloud_csv(cloud: PointCloud, path_or_buf, with_weights=True):
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        f.write(f"# dim={cloud.dim} radius={cloud.radius!r}"
                + (f" volume={cloud.volume!r}" if cloud.volume else "") + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(cloud.dim)] + (["weight"] if with_weights else []))
        for p, wt in zip(cloud.points, cloud.weights):
            w.writerow([repr(float(x)) for x in p] + ([repr(float(wt))] if with_weights else []))
    finally:
        if own:
            f.close()


def read_cloud_csv(path_or_buf) -> PointCloud:
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    f = open(path_or_buf, encoding="utf-8") if own else path_or_buf
    try:
        head = f.readline()
        meta = dict(kv.split("=") for kv in head.lstrip("#").split())
        rows = list(csv.reader(f))
    finally:
        if own:
            f.close()
    cols = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    d = int(meta["dim"])
    if data.shape[1] not in (d, d + 1):
        raise ValueError("column count does not match the header dimension")
    pts = data[:, :d]
    wts = data[:, d] if "weight" in cols else None
    if wts is not None:
        wts = wts / wts.sum()
    vol = float(meta["volume"]) if "volume" in meta else None
    return PointCloud(pts, wts, float(meta["radius"]), vol)


def write_plan_csv(plan: TransportPlan, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["i", "j", "mass"])
        for i, j, m in zip(plan.rows, plan.cols, plan.mass):
            w.writerow([int(i), int(j), repr(float(m))])


def cloud_from_text(text: str) -> PointCloud:
    return read_cloud_csv(io.StringIO(text))


# samplers used by tests and the CLI --------------------------------------------------

def uniform_ball_cloud(n, d, radius, rng, center=None):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    pts = g * radius * rng.random((n, 1)) ** (1 / d)
    if center is not None:
        pts = pts + np.asarray(center, float)
    vol = pi ** (d / 2) / gamma(d / 2 + 1) * radius ** d
    return PointCloud(pts, None, None, vol)


def uniform_cube_cloud(n, d, side, rng, offset=None):
    pts = side * rng.random((n, d))
    if offset is not None:
        pts = pts + np.asarray(offset, float)
    return PointCloud(pts, None, None, side ** d)


__all__ = [
    "PointCloud", "TransportPlan", "solve_ot", "sq_cost", "brute_force_cost",
    "check_cyclical_monotonicity", "MonotonicityResult", "monge_ampere_ratio_check", "RatioReport",
    "group_bm_map", "GroupBMReport", "jacobian_amgm_check", "AMGMReport", "write_cloud_csv",
    "read_cloud_csv", "write_plan_csv", "uniform_ball_cloud", "uniform_cube_cloud",
    "InfeasibleWeights", "DegenerateCloud",
]

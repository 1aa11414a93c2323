"""Compact Lie groups with a diameter-one bi-invariant metric.

Every group works on batched numpy arrays: group elements are arrays of shape
(..., param_dim) and algebra vectors are arrays of shape (..., dim) holding
coordinates in an orthonormal basis for the normalized metric, so that
``dist_e(exp(X)) == |X|`` inside the injectivity radius.

Parameterizations (also the JSON field order):
    SU2, SO3   unit quaternion (w, x, y, z); SO3 keeps the sign with the first
               nonzero coordinate positive
    Torus(d)   angles in [0, 1)
    SOn(n)     orthogonal matrix, row-major
    Product    concatenation of the factor parameters
"""
from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt

import numpy as np
from scipy.linalg import expm, logm

CUT_LOCUS = 0.999


class GroupMismatch(ValueError):
    pass


class CutLocus(ValueError):
    """Raised by log when the element is at or near the cut locus of e."""

    def __init__(self, distance: float):
        self.distance = float(distance)
        self.defect = float(distance - CUT_LOCUS)
        super().__init__(
            f"element at normalized distance {distance:.6f} from e; "
            f"log is only defined up to {CUT_LOCUS} (defect {self.defect:.2e})"
        )


def _cross(a, b):
    return np.cross(a, b)


# quaternion helpers, arrays of shape (..., 4) in (w, x, y, z) order

def qmul(a, b):
    aw, ax, ay, az = np.moveaxis(np.asarray(a, float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, float), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def qconj(q):
    q = np.array(q, float, copy=True)
    q[..., 1:] *= -1.0
    return q


def qrotate(q, v):
    """Rotate 3-vectors v by unit quaternions q."""
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * _cross(u, v)
    return v + w * t + _cross(u, t)


def _unit(q):
    q = np.asarray(q, float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def canonical_sign(q):
    """Flip q to -q so that the first nonzero coordinate is positive."""
    q = np.array(q, float, copy=True)
    flat = q.reshape(-1, 4)
    nz = np.abs(flat) > 1e-15
    first = np.argmax(nz, axis=1)
    lead = flat[np.arange(len(flat)), first]
    flat[lead < 0] *= -1.0
    return flat.reshape(q.shape)


class Group:
    """Base class; subclasses fill in the batched primitives."""

    family = "abstract"
    dim = 0
    param_dim = 0
    diameter_raw = 1.0
    name = "?"

    @property
    def metric_scale(self) -> float:
        return 1.0 / self.diameter_raw

    @property
    def abelian(self) -> bool:
        return False

    @property
    def injectivity_radius(self) -> float:
        """Normalized radius of the largest ball on which exp is injective."""
        return self.injectivity_raw / self.diameter_raw

    injectivity_raw = pi

    def key(self):
        return (self.family, self.name)

    def __eq__(self, other):
        return isinstance(other, Group) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"

    def descriptor(self) -> dict:
        return {
            "family": self.family,
            "name": self.name,
            "dim": self.dim,
            "diameter_raw": self.diameter_raw,
            "metric_scale": self.metric_scale,
        }

    # primitives -----------------------------------------------------------
    def identity(self) -> np.ndarray:
        raise NotImplementedError

    def mul(self, a, b):
        raise NotImplementedError

    def inv(self, a):
        raise NotImplementedError

    def project(self, a):
        return np.asarray(a, float)

    def exp(self, X):
        raise NotImplementedError

    def log(self, g, check: bool = True):
        raise NotImplementedError

    def dist_e(self, g):
        raise NotImplementedError

    def bracket(self, X, Y):
        raise NotImplementedError

    def Ad(self, g, X):
        raise NotImplementedError

    def sample(self, rng, n: int):
        raise NotImplementedError

    def embed(self, g):
        """Euclidean embedding used for neighbour search."""
        raise NotImplementedError

    def chord(self, r):
        """Upper bound on embedding distance for points at normalized distance r."""
        raise NotImplementedError

    def embed_copies(self, g):
        """All embeddings of g (SO3 stores both quaternion signs)."""
        return [self.embed(g)]

    # derived --------------------------------------------------------------
    def dist(self, g, h):
        return self.dist_e(self.mul(self.inv(g), h))

    def ad_matrix(self, X):
        """Matrix of ad(X) acting on coordinates: ad(X) @ Y == bracket(X, Y)."""
        X = np.asarray(X, float)
        eye = np.eye(self.dim)
        cols = self.bracket(X[..., None, :], eye)  # (..., j, i) = [X, e_j]_i
        return np.swapaxes(cols, -1, -2)

    def check_log(self, g):
        d = np.asarray(self.dist_e(g))
        if np.any(d > CUT_LOCUS):
            raise CutLocus(float(np.max(d)))

    def bch(self, X, Y, order: int = 2):
        X = np.asarray(X, float)
        Y = np.asarray(Y, float)
        if order < 1 or order > 4:
            raise ValueError("BCH order must be between 1 and 4")
        Z = X + Y
        if order >= 2:
            XY = self.bracket(X, Y)
            Z = Z + 0.5 * XY
        if order >= 3:
            Z = Z + (self.bracket(X, XY) - self.bracket(Y, XY)) / 12.0
        if order >= 4:
            Z = Z - self.bracket(Y, self.bracket(X, XY)) / 24.0
        return Z

    def haar_density(self, X):
        """|det(sinh(ad X/2) / (ad X/2))| from the spectrum of ad(X)."""
        X = np.asarray(X, float)
        if self.abelian:
            return np.ones(X.shape[:-1])
        lam = np.linalg.eigvals(self.ad_matrix(X)).imag
        return np.abs(np.prod(np.sinc(lam / (2 * pi)), axis=-1))


class _QuaternionGroup(Group):
    param_dim = 4
    dim = 3
    diameter_raw = pi

    def identity(self):
        return np.array([1.0, 0.0, 0.0, 0.0])

    def inv(self, a):
        return qconj(a)

    def Ad(self, g, X):
        return qrotate(g, X)

    def sample(self, rng, n):
        return self.project(rng.standard_normal((n, 4)))

    def embed(self, g):
        return np.asarray(g, float)


class SU2(_QuaternionGroup):
    family = "SU2"
    name = "su2"

    def project(self, a):
        return _unit(a)

    def mul(self, a, b):
        return _unit(qmul(a, b))

    def exp(self, X):
        X = np.asarray(X, float)
        r = np.linalg.norm(X, axis=-1, keepdims=True)
        return _unit(np.concatenate([np.cos(pi * r), pi * np.sinc(r) * X], axis=-1))

    def dist_e(self, g):
        g = np.asarray(g, float)
        return np.arctan2(np.linalg.norm(g[..., 1:], axis=-1), g[..., 0]) / pi

    def log(self, g, check=True):
        g = np.asarray(g, float)
        if check:
            self.check_log(g)
        t = np.arctan2(np.linalg.norm(g[..., 1:], axis=-1), g[..., 0])
        return g[..., 1:] / (pi * np.sinc(t / pi))[..., None]

    def bracket(self, X, Y):
        return 2 * pi * _cross(X, Y)

    def chord(self, r):
        return 2.0 * np.sin(pi * np.minimum(r, 1.0) / 2.0)


class SO3(_QuaternionGroup):
    family = "SO3"
    name = "so3"

    def project(self, a):
        return canonical_sign(_unit(a))

    def mul(self, a, b):
        return self.project(qmul(a, b))

    def inv(self, a):
        return canonical_sign(qconj(a))

    def exp(self, X):
        X = np.asarray(X, float)
        r = np.linalg.norm(X, axis=-1, keepdims=True)
        q = np.concatenate([np.cos(pi * r / 2), (pi / 2) * np.sinc(r / 2) * X], axis=-1)
        return self.project(q)

    def dist_e(self, g):
        g = np.asarray(g, float)
        return 2.0 * np.arctan2(np.linalg.norm(g[..., 1:], axis=-1), np.abs(g[..., 0])) / pi

    def log(self, g, check=True):
        g = np.asarray(g, float)
        if check:
            self.check_log(g)
        s = np.where(g[..., :1] < 0, -1.0, 1.0)
        v = g[..., 1:] * s
        th = 2.0 * np.arctan2(np.linalg.norm(v, axis=-1), np.abs(g[..., 0]))
        return v * ((2 / pi) / np.sinc(th / (2 * pi)))[..., None]

    def bracket(self, X, Y):
        return pi * _cross(X, Y)

    def chord(self, r):
        return 2.0 * np.sin(pi * np.minimum(r, 1.0) / 4.0)

    def embed_copies(self, g):
        g = np.asarray(g, float)
        return [g, -g]

    def rotation_matrix(self, g):
        g = np.asarray(g, float)
        w, x, y, z = np.moveaxis(g, -1, 0)
        return np.stack([
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ], -2)


class Torus(Group):
    family = "Torus"

    def __init__(self, d: int):
        if not 1 <= d <= 4:
            raise ValueError("torus dimension must be between 1 and 4")
        self.d = self.dim = self.param_dim = int(d)
        self.diameter_raw = sqrt(d) / 2.0
        self.injectivity_raw = 0.5
        self.name = f"t{d}"

    @property
    def abelian(self):
        return True

    def identity(self):
        return np.zeros(self.d)

    def mul(self, a, b):
        return np.mod(np.asarray(a, float) + np.asarray(b, float), 1.0)

    def inv(self, a):
        return np.mod(-np.asarray(a, float), 1.0)

    def project(self, a):
        return np.mod(np.asarray(a, float), 1.0)

    def exp(self, X):
        return np.mod(np.asarray(X, float) * self.diameter_raw, 1.0)

    @staticmethod
    def wrap(a):
        a = np.asarray(a, float)
        return a - np.round(a)

    def dist_e(self, g):
        return np.linalg.norm(self.wrap(g), axis=-1) / self.diameter_raw

    def log(self, g, check=True):
        if check:
            self.check_log(g)
        return self.wrap(g) / self.diameter_raw

    def bracket(self, X, Y):
        return np.zeros(np.broadcast_shapes(np.shape(X), np.shape(Y)))

    def Ad(self, g, X):
        return np.broadcast_to(np.asarray(X, float), np.broadcast_shapes(np.shape(X), np.shape(g)[:-1] + (self.d,))).copy()

    def sample(self, rng, n):
        return rng.random((n, self.d))

    def embed(self, g):
        a = 2 * pi * np.asarray(g, float)
        return np.concatenate([np.cos(a), np.sin(a)], axis=-1)

    def chord(self, r):
        return 2 * pi * np.asarray(r, float) * self.diameter_raw


class SOn(Group):
    """SO(n) as orthogonal matrices with <X, Y> = -tr(XY)/2 before normalization."""

    family = "SOn"

    def __init__(self, n: int):
        if not 2 <= n <= 5:
            raise ValueError("SO(n) supported for 2 <= n <= 5")
        self.n = int(n)
        self.dim = n * (n - 1) // 2
        self.param_dim = n * n
        self.diameter_raw = pi * sqrt(n // 2)
        self.name = f"so{n}" if n != 3 else "son3"
        self._pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        self._I = np.array([p[0] for p in self._pairs])
        self._J = np.array([p[1] for p in self._pairs])

    @property
    def abelian(self):
        return self.n == 2

    def mat(self, g):
        g = np.asarray(g, float)
        return g.reshape(g.shape[:-1] + (self.n, self.n))

    def flat(self, M):
        return M.reshape(M.shape[:-2] + (self.param_dim,))

    def hat(self, x):
        x = np.asarray(x, float)
        M = np.zeros(x.shape[:-1] + (self.n, self.n))
        M[..., self._I, self._J] = -x
        M[..., self._J, self._I] = x
        return M

    def vee(self, M):
        return 0.5 * (M[..., self._J, self._I] - M[..., self._I, self._J])

    def identity(self):
        return np.eye(self.n).ravel()

    def project(self, a):
        M = self.mat(a)
        Mb = M.reshape(-1, self.n, self.n)
        U, _, Vt = np.linalg.svd(Mb)
        neg = np.linalg.det(U @ Vt) < 0
        U[neg, :, -1] *= -1.0
        return (U @ Vt).reshape(M.shape[:-2] + (self.param_dim,))

    def mul(self, a, b):
        return self.project(self.flat(self.mat(a) @ self.mat(b)))

    def inv(self, a):
        return self.flat(np.swapaxes(self.mat(a), -1, -2).copy())

    def exp(self, X):
        X = np.asarray(X, float)
        return self.project(self.flat(expm(self.hat(X * self.diameter_raw))))

    def angles(self, g):
        lam = np.linalg.eigvals(self.mat(g))
        return np.abs(np.angle(lam))

    def dist_e(self, g):
        a = self.angles(g)
        return np.sqrt(0.5 * np.sum(a * a, axis=-1)) / self.diameter_raw

    def log(self, g, check=True):
        g = np.asarray(g, float)
        if check:
            self.check_log(g)
        M = self.mat(g)
        flatM = M.reshape(-1, self.n, self.n)
        out = np.empty((len(flatM), self.dim))
        for k, m in enumerate(flatM):
            L = np.real(logm(m))
            out[k] = self.vee(0.5 * (L - L.T))
        return out.reshape(M.shape[:-2] + (self.dim,)) / self.diameter_raw

    def bracket(self, X, Y):
        A = self.hat(X)
        B = self.hat(Y)
        return self.diameter_raw * self.vee(A @ B - B @ A)

    def Ad(self, g, X):
        M = self.mat(g)
        return self.vee(M @ self.hat(X) @ np.swapaxes(M, -1, -2))

    def sample(self, rng, n):
        Z = rng.standard_normal((n, self.n, self.n))
        Q, R = np.linalg.qr(Z)
        d = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
        d[d == 0] = 1.0
        Q = Q * d[:, None, :]
        neg = np.linalg.det(Q) < 0
        Q[neg, :, 0] *= -1.0
        return self.flat(Q)

    def embed(self, g):
        return np.asarray(g, float)

    def chord(self, r):
        return sqrt(2.0) * np.asarray(r, float) * self.diameter_raw


class Product(Group):
    family = "Product"

    def __init__(self, factors):
        factors = list(factors)
        if len(factors) < 2:
            raise ValueError("a product needs at least two factors")
        self.factors = factors
        self.dim = sum(f.dim for f in factors)
        self.param_dim = sum(f.param_dim for f in factors)
        self.diameter_raw = sqrt(sum(f.diameter_raw ** 2 for f in factors))
        self.injectivity_raw = min(f.injectivity_raw for f in factors)
        self.name = "x".join(f.name for f in factors)
        self._p = np.cumsum([0] + [f.param_dim for f in factors])
        self._d = np.cumsum([0] + [f.dim for f in factors])
        self._s = [self.diameter_raw / f.diameter_raw for f in factors]

    @property
    def abelian(self):
        return all(f.abelian for f in self.factors)

    def psplit(self, g):
        g = np.asarray(g, float)
        return [g[..., self._p[i]:self._p[i + 1]] for i in range(len(self.factors))]

    def asplit(self, X):
        X = np.asarray(X, float)
        return [X[..., self._d[i]:self._d[i + 1]] for i in range(len(self.factors))]

    def _zip(self, fn, *parts):
        return np.concatenate([fn(f, *p) for f, p in zip(self.factors, zip(*parts))], axis=-1)

    def identity(self):
        return np.concatenate([f.identity() for f in self.factors])

    def mul(self, a, b):
        return self._zip(lambda f, x, y: f.mul(x, y), self.psplit(a), self.psplit(b))

    def inv(self, a):
        return self._zip(lambda f, x: f.inv(x), self.psplit(a))

    def project(self, a):
        return self._zip(lambda f, x: f.project(x), self.psplit(a))

    def exp(self, X):
        parts = self.asplit(X)
        return np.concatenate([f.exp(x * s) for f, x, s in zip(self.factors, parts, self._s)], axis=-1)

    def factor_dists(self, g):
        return [f.dist_e(x) for f, x in zip(self.factors, self.psplit(g))]

    def dist_e(self, g):
        tot = 0.0
        for f, d in zip(self.factors, self.factor_dists(g)):
            tot = tot + (f.diameter_raw * d) ** 2
        return np.sqrt(tot) / self.diameter_raw

    def log(self, g, check=True):
        if check:
            self.check_log(g)
            for d in self.factor_dists(g):
                if np.any(np.asarray(d) > CUT_LOCUS):
                    raise CutLocus(float(np.max(self.dist_e(g))))
        parts = self.psplit(g)
        return np.concatenate([f.log(x, check=False) / s for f, x, s in zip(self.factors, parts, self._s)], axis=-1)

    def bracket(self, X, Y):
        xs, ys = self.asplit(X), self.asplit(Y)
        return np.concatenate(
            [f.bracket(x * s, y * s) / s for f, x, y, s in zip(self.factors, xs, ys, self._s)], axis=-1)

    def Ad(self, g, X):
        return self._zip(lambda f, h, x: f.Ad(h, x), self.psplit(g), self.asplit(X))

    def sample(self, rng, n):
        return np.concatenate([f.sample(rng, n) for f in self.factors], axis=-1)

    def embed(self, g):
        return self._zip(lambda f, x: f.embed(x), self.psplit(g))

    def embed_copies(self, g):
        out = [[]]
        for f, x in zip(self.factors, self.psplit(g)):
            out = [o + [c] for o in out for c in f.embed_copies(x)]
        return [np.concatenate(o, axis=-1) for o in out]

    def chord(self, r):
        r = np.asarray(r, float)
        tot = 0.0
        for f, s in zip(self.factors, self._s):
            tot = tot + f.chord(np.minimum(r * s, 1.0)) ** 2
        return np.sqrt(tot)


def make_group(spec: str) -> Group:
    """Parse names like 'so3', 'su2', 't2', 'so4', 'son3', 'so3xt1'."""
    spec = spec.strip().lower()
    if "x" in spec:
        return Product([make_group(p) for p in spec.split("x")])
    if spec == "so3":
        return SO3()
    if spec == "su2":
        return SU2()
    if spec.startswith("son"):
        return SOn(int(spec[3:]))
    if spec.startswith("so"):
        return SOn(int(spec[2:]))
    if spec.startswith("t") and spec[1:].isdigit():
        return Torus(int(spec[1:]))
    raise ValueError(f"unknown group '{spec}' (try so3, su2, t1..t4, so2..so5 or products like so3xt1)")


# object-level API ------------------------------------------------------------

@dataclass(frozen=True)
class GroupElement:
    group: Group
    data: np.ndarray

    def to_json(self):
        return [float(v) for v in np.ravel(self.data)]


@dataclass(frozen=True)
class AlgebraVector:
    group: Group
    coords: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


def _same(a, b):
    if a.group != b.group:
        raise GroupMismatch(f"{a.group.name} vs {b.group.name}")
    return a.group


def identity(G: Group) -> GroupElement:
    return GroupElement(G, G.identity())


def element(G: Group, data) -> GroupElement:
    return GroupElement(G, G.project(np.asarray(data, float)))


def multiply(g: GroupElement, h: GroupElement) -> GroupElement:
    G = _same(g, h)
    return GroupElement(G, G.mul(g.data, h.data))


def inverse(g: GroupElement) -> GroupElement:
    return GroupElement(g.group, g.group.inv(g.data))


def exp_map(X: AlgebraVector) -> GroupElement:
    return GroupElement(X.group, X.group.exp(X.coords))


def log_map(g: GroupElement) -> AlgebraVector:
    return AlgebraVector(g.group, g.group.log(g.data))


def distance(g: GroupElement, h: GroupElement) -> float:
    G = _same(g, h)
    return float(G.dist(g.data, h.data))


def bracket(X: AlgebraVector, Y: AlgebraVector) -> AlgebraVector:
    G = _same(X, Y)
    return AlgebraVector(G, G.bracket(X.coords, Y.coords))


def bch_truncated(X: AlgebraVector, Y: AlgebraVector, order: int = 2) -> AlgebraVector:
    G = _same(X, Y)
    return AlgebraVector(G, G.bch(X.coords, Y.coords, order))


def haar_sample(G: Group, rng_seed, n: int) -> list:
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(rng_seed)
    return [GroupElement(G, row) for row in G.sample(rng, n)]


def adjoint(g: GroupElement, X: AlgebraVector) -> AlgebraVector:
    G = _same(g, X)
    return AlgebraVector(G, G.Ad(g.data, X.coords))


def haar_density(X: AlgebraVector) -> float:
    return float(X.group.haar_density(X.coords))


def ad_matrix(X: AlgebraVector) -> np.ndarray:
    return X.group.ad_matrix(X.coords)

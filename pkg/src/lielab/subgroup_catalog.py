"""Maximal-dimension subgroups: the classification table and embedded subgroups.

The table covers compact simple Lie algebras. The embedded subgroups are the
ones the computational groups need: SO3 > SO2, SU2 > U(1), coordinate
subtori of T^d, and the stabilizer SO(n-1) < SO(n).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from math import pi

import numpy as np

from .group_core import SO3, SU2, Group, Product, SOn, Torus, qmul
from .regions import Rectangle, SetRegion, Tube

# closed forms: (dim g, codim of h_M, h_M) as functions of the rank
_CLASSICAL = {
    "a_r": (lambda r: r * (r + 2), lambda r: 2 * r, lambda r: f"R x a_{r - 1}" if r > 1 else "R"),
    "b_r": (lambda r: r * (2 * r + 1), lambda r: 2 * r, lambda r: f"d_{r - 1}"),
    "c_r": (lambda r: r * (2 * r + 1), lambda r: 4 * (r - 1), lambda r: f"a_1 x c_{r - 1}"),
    "d_r": (lambda r: r * (2 * r - 1), lambda r: 2 * r - 1, lambda r: f"b_{r - 1}"),
}
_RANKS = {
    "a_r": [r for r in range(1, 9) if r != 3],  # a_3 = d_3
    "b_r": list(range(3, 9)),
    "c_r": list(range(2, 9)),
    "d_r": list(range(3, 9)),
}
_EXCEPTIONAL = [
    ("e6", 6, 78, 26, "f_4"),
    ("e7", 7, 133, 54, "R x e_6"),
    ("e8", 8, 248, 112, "a_1 x e_7"),
    ("f4", 4, 52, 16, "b_4"),
    ("g2", 2, 14, 6, "a_2"),
]
# low-rank coincidences resolved to the row that holds
_ALIASES = {("a_r", 3): ("d_r", 3), ("b_r", 1): ("a_r", 1), ("c_r", 1): ("a_r", 1),
            ("b_r", 2): ("c_r", 2)}


class UnsupportedGroup(ValueError):
    pass


class UnknownSubgroup(KeyError):
    pass


@dataclass(frozen=True)
class MaximalDimensionEntry:
    family: str
    rank: int
    dim_g: int
    codim: int
    h_description: str


def _build_table():
    rows = []
    for fam, (fd, fc, fh) in _CLASSICAL.items():
        for r in _RANKS[fam]:
            rows.append(MaximalDimensionEntry(fam, r, fd(r), fc(r), fh(r)))
    for fam, r, dg, cd, h in _EXCEPTIONAL:
        rows.append(MaximalDimensionEntry(fam, r, dg, cd, h))
    rows.sort(key=lambda e: (e.family, e.rank))
    return tuple(rows)


TABLE = _build_table()


def catalog_entries():
    return list(TABLE)


def lookup(family: str, rank: int | None = None) -> MaximalDimensionEntry:
    fam = family.lower()
    if fam in {"e6", "e7", "e8", "f4", "g2"}:
        rank = int(fam[1])
    if rank is None:
        raise UnsupportedGroup(f"family {family} needs a rank")
    fam, rank = _ALIASES.get((fam, rank), (fam, rank))
    for e in TABLE:
        if e.family == fam and e.rank == rank:
            return e
    raise UnsupportedGroup(f"no table row for {family} rank {rank}")


def catalog_json() -> str:
    return json.dumps([asdict(e) for e in TABLE], sort_keys=True, separators=(",", ":"))


def critical_exponent(G) -> int:
    """d_G - d_H for the maximal-dimension proper closed subgroup H.

    Products reduce one factor at a time (diagonal embeddings are not
    considered), so the exponent is the minimum over the factors.
    """
    if isinstance(G, (SU2, SO3)):
        return lookup("a_r", 1).codim
    if isinstance(G, Torus):
        return 1
    if isinstance(G, SOn):
        if G.n == 2:
            return 1
        if G.n == 3:
            return lookup("a_r", 1).codim
        if G.n == 4:  # so(4) = a_1 + a_1
            return lookup("a_r", 1).codim
        if G.n == 5:
            return lookup("b_r", 2).codim
    if isinstance(G, Product):
        return min(critical_exponent(f) for f in G.factors)
    if isinstance(G, str):
        return lookup(*_parse_family(G)).codim
    raise UnsupportedGroup(f"no critical exponent for {G!r}")


def _parse_family(s: str):
    s = s.lower().replace("_", "")
    if s in {"e6", "e7", "e8", "f4", "g2"}:
        return s, None
    return f"{s[0]}_r", int(s[1:])


# embedded subgroups ------------------------------------------------------------

class SubgroupDescriptor:
    """A closed subgroup H of a computational group with its Lie algebra split."""

    name = "?"
    dim_h = 0

    def __init__(self, ambient: Group):
        self.ambient = ambient

    algebra_basis: np.ndarray
    perp_basis: np.ndarray

    @property
    def codim(self):
        return self.ambient.dim - self.dim_h

    def distance(self, P):
        """Normalized distance from each point to H."""
        raise NotImplementedError

    def contains(self, P, tol=1e-9):
        return self.distance(P) < tol

    def element(self, a):
        """Element of H with normalized H-coordinate a (length dim_h)."""
        a = np.atleast_1d(np.asarray(a, float))
        return self.ambient.exp(a @ self.algebra_basis)

    def sample(self, rng, n):
        raise NotImplementedError

    def h_param(self, P):
        """H-coordinate of the H-component of points near H."""
        return self.rect_coords(P)[1]

    def rect_coords(self, P):
        """(|v|, a) with P = exp(v) exp(a), v in h-perp, a in h (normalized)."""
        raise NotImplementedError(f"rectangles are not available for {self.name}")

    def lipschitz(self, v):
        """Bound on |grad a| at points with |v| <= v."""
        return 1.0

    @property
    def diameter_h(self):
        """Normalized radius of the H-coordinate box (a in (-diam, diam])."""
        return 1.0

    def describe(self):
        return {"ambient": self.ambient.name, "name": self.name, "dim_h": self.dim_h,
                "codim": self.codim}

    def __repr__(self):
        return f"Subgroup({self.ambient.name}:{self.name})"

    def __eq__(self, other):
        return isinstance(other, SubgroupDescriptor) and (self.ambient, self.name) == (other.ambient, other.name)

    def __hash__(self):
        return hash((self.ambient, self.name))


class _AxisCircle(SubgroupDescriptor):
    """Rotations about the z-axis inside SO3 or SU2."""

    dim_h = 1

    def __init__(self, ambient):
        super().__init__(ambient)
        self.algebra_basis = np.array([[0.0, 0.0, 1.0]])
        self.perp_basis = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        self._so3 = isinstance(ambient, SO3)
        self.name = "so2_z" if self._so3 else "u1"

    def _halfangles(self, P):
        P = np.asarray(P, float)
        w, x, y, z = np.moveaxis(P, -1, 0)
        hb = np.arctan2(np.hypot(x, y), np.hypot(w, z))  # beta/2
        return hb, np.arctan2(z, w), np.arctan2(y, x)

    def distance(self, P):
        hb, _, _ = self._halfangles(P)
        return 2 * hb / pi if self._so3 else hb / pi

    def rect_coords(self, P):
        hb, Pa, _ = self._halfangles(P)
        if self._so3:
            v = 2 * hb / pi
            a = 2 * Pa / pi
            a = a - 2 * np.round(a / 2)  # q ~ -q shifts a by 2
        else:
            v = hb / pi
            a = Pa / pi
        return v, a[..., None]

    def lipschitz(self, v):
        half = pi * np.asarray(v, float) / (2 if self._so3 else 1)
        half = np.minimum(half, pi / 2 - 1e-9)
        return 1.0 / np.cos(half)

    def sample(self, rng, n):
        return self.element(rng.uniform(-1.0, 1.0, size=(n, 1)))

    def element(self, a):
        a = np.asarray(a, float)
        if a.ndim == 0:
            a = a[None]
        if a.shape[-1] != 1:
            a = a[..., None]
        return self.ambient.exp(a * self.algebra_basis[0])


class _CoordinateSubtorus(SubgroupDescriptor):
    def __init__(self, ambient: Torus, coords):
        super().__init__(ambient)
        d = ambient.d
        self.coords = sorted(coords)
        self.perp = [i for i in range(d) if i not in self.coords]
        self.dim_h = len(self.coords)
        letters = "xyzw"
        self.name = f"t{self.dim_h}" + ("_" + "".join(letters[i] for i in self.coords) if self.coords else "")
        eye = np.eye(d)
        self.algebra_basis = eye[self.coords]
        self.perp_basis = eye[self.perp]

    def distance(self, P):
        w = Torus.wrap(np.asarray(P, float)[..., self.perp])
        return np.linalg.norm(w, axis=-1) / self.ambient.diameter_raw

    def rect_coords(self, P):
        P = np.asarray(P, float)
        v = np.linalg.norm(Torus.wrap(P[..., self.perp]), axis=-1) / self.ambient.diameter_raw
        a = Torus.wrap(P[..., self.coords]) / self.ambient.diameter_raw
        return v, a

    @property
    def diameter_h(self):
        return 0.5 / self.ambient.diameter_raw

    def sample(self, rng, n):
        out = np.zeros((n, self.ambient.d))
        out[:, self.coords] = rng.random((n, self.dim_h))
        return out


class _Stabilizer(SubgroupDescriptor):
    """SO(n-1) fixing the first basis vector inside SO(n)."""

    def __init__(self, ambient: SOn):
        super().__init__(ambient)
        n = ambient.n
        self.dim_h = (n - 1) * (n - 2) // 2
        self.name = f"so{n - 1}" if n != 3 else "so2"
        pairs = ambient._pairs
        eye = np.eye(ambient.dim)
        self.algebra_basis = eye[[k for k, (i, j) in enumerate(pairs) if i > 0]]
        self.perp_basis = eye[[k for k, (i, j) in enumerate(pairs) if i == 0]]

    def distance(self, P):
        M = self.ambient.mat(P)
        return np.arccos(np.clip(M[..., 0, 0], -1.0, 1.0)) / self.ambient.diameter_raw

    def sample(self, rng, n):
        k = self.ambient.n - 1
        inner = SOn(k).sample(rng, n).reshape(n, k, k) if k >= 2 else np.ones((n, 1, 1))
        out = np.zeros((n, k + 1, k + 1))
        out[:, 0, 0] = 1.0
        out[:, 1:, 1:] = inner
        return out.reshape(n, -1)


def builtin_subgroup(G: Group, name: str | None = None) -> SubgroupDescriptor:
    """Instantiate a named subgroup (default: the catalogued maximal one)."""
    if isinstance(G, (SO3, SU2)):
        H = _AxisCircle(G)
        if name in (None, H.name):
            return H
    elif isinstance(G, Torus):
        if name is None:
            return _CoordinateSubtorus(G, range(G.d - 1))
        letters = "xyzw"
        if name.startswith("t") and (name[1:] == "0" or "_" in name):
            coords = [letters.index(c) for c in name.split("_")[1]] if "_" in name else []
            H = _CoordinateSubtorus(G, coords)
            if H.name == name and all(c < G.d for c in coords) and len(coords) < G.d:
                return H
    elif isinstance(G, SOn) and G.n >= 3:
        H = _Stabilizer(G)
        if name in (None, H.name):
            return H
    raise UnknownSubgroup(f"no subgroup '{name}' in {G.name}")


def subgroup_names(G: Group):
    if isinstance(G, (SO3, SU2)):
        return [_AxisCircle(G).name]
    if isinstance(G, Torus):
        import itertools
        out = []
        for k in range(G.d - 1, -1, -1):
            for c in itertools.combinations(range(G.d), k):
                out.append(_CoordinateSubtorus(G, c).name)
        return out
    if isinstance(G, SOn) and G.n >= 3:
        return [_Stabilizer(G).name]
    return []


def maximal_subgroups(G: Group):
    """Catalogued subgroups whose codimension equals the critical exponent."""
    out = []
    for nm in subgroup_names(G):
        H = builtin_subgroup(G, nm)
        if H.codim == critical_exponent(G):
            out.append(H)
    return out


def distance_to_subgroup(g, H: SubgroupDescriptor) -> float:
    data = getattr(g, "data", g)
    return float(H.distance(np.asarray(data, float)))


def tube(H: SubgroupDescriptor, delta: float) -> SetRegion:
    if not 0 < delta < 0.5:
        raise ValueError("tube width must lie in (0, 0.5)")
    return Tube(H, delta)


def rectangle(H: SubgroupDescriptor, h, delta: float, rho: float) -> SetRegion:
    data = getattr(h, "data", h)
    return Rectangle(H, np.asarray(data, float), delta, rho)


def conjugate_point(G, g, P):
    """g P g^-1 for a batch of points."""
    return G.mul(G.mul(g, P), G.inv(g))


__all__ = [
    "MaximalDimensionEntry", "TABLE", "catalog_entries", "catalog_json", "lookup",
    "critical_exponent", "SubgroupDescriptor", "builtin_subgroup", "subgroup_names",
    "maximal_subgroups", "distance_to_subgroup", "tube", "rectangle", "UnknownSubgroup",
    "UnsupportedGroup", "qmul",
]

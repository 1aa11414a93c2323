import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lielab.group_core import SO3, SU2, SOn, Torus, make_group
from lielab.subgroup_catalog import (
    TABLE, UnknownSubgroup, UnsupportedGroup, builtin_subgroup, catalog_json, critical_exponent,
    distance_to_subgroup, lookup, maximal_subgroups, rectangle, subgroup_names, tube,
)


def _all_subgroups():
    out = []
    for name in ["so3", "su2", "t1", "t2", "t3", "so4", "so5"]:
        G = make_group(name)
        for s in subgroup_names(G):
            out.append(builtin_subgroup(G, s))
    return out


SUBGROUPS = _all_subgroups()


def test_critical_exponents():
    assert critical_exponent(SO3()) == 2
    assert critical_exponent(SU2()) == 2
    assert critical_exponent(Torus(3)) == 1
    assert critical_exponent("g2") == 6
    assert critical_exponent("e8") == 112
    assert critical_exponent(SOn(5)) == lookup("b_r", 2).codim == 4


def test_lookup_rows_and_aliases():
    assert lookup("a_r", 1).dim_g == 3
    # a_3 = d_3 as Lie algebras, the table keeps the d_3 row
    assert lookup("a_r", 3).family == "d_r"
    assert lookup("d_r", 3).codim == 5
    with pytest.raises(UnsupportedGroup):
        lookup("z_r", 2)


def test_catalog_json_roundtrip():
    rows = json.loads(catalog_json())
    assert len(rows) == len(TABLE)
    assert {r["family"] for r in rows} >= {"a_r", "b_r", "c_r", "d_r", "e6", "g2"}


def test_unsupported_group():
    with pytest.raises(UnsupportedGroup):
        critical_exponent(object())


@pytest.mark.parametrize("H", SUBGROUPS, ids=lambda H: f"{H.ambient.name}:{H.name}")
def test_dimension_accounting(H):
    G = H.ambient
    assert H.dim_h + H.codim == G.dim
    basis = np.concatenate([H.algebra_basis, H.perp_basis]) if H.dim_h else H.perp_basis
    assert basis.shape == (G.dim, G.dim)
    assert np.allclose(basis @ basis.T, np.eye(G.dim))


@pytest.mark.parametrize("H", [H for H in SUBGROUPS if H.dim_h > 1 or not H.ambient.abelian],
                         ids=lambda H: f"{H.ambient.name}:{H.name}")
def test_bracket_closure(H):
    G = H.ambient
    B = H.algebra_basis
    for X in B:
        for Y in B:
            Z = G.bracket(X, Y)
            assert np.allclose(H.perp_basis @ Z, 0.0, atol=1e-10)


@pytest.mark.parametrize("H", SUBGROUPS, ids=lambda H: f"{H.ambient.name}:{H.name}")
def test_perp_is_ad_H_invariant(H):
    G = H.ambient
    if H.dim_h == 0:
        return
    rng = np.random.default_rng(2)
    for h in H.sample(rng, 5):
        for X in H.perp_basis:
            Y = G.Ad(h, X)
            assert np.allclose(H.algebra_basis @ Y, 0.0, atol=1e-9)


def test_u1_rotates_its_complement():
    G = SU2()
    H = builtin_subgroup(G, "u1")
    assert H.perp_basis.shape[0] == 2
    h = H.element(np.array([0.25]))
    Y = G.Ad(h, H.perp_basis[0])
    # a quarter of the H-circle turns the complement by a nonzero angle
    assert np.allclose(np.linalg.norm(Y), 1.0)
    assert abs(Y @ H.perp_basis[0]) < 1 - 1e-3


@pytest.mark.parametrize("H", SUBGROUPS, ids=lambda H: f"{H.ambient.name}:{H.name}")
def test_members_have_distance_zero(H):
    pts = H.sample(np.random.default_rng(0), 20)
    assert np.max(H.distance(pts)) < 1e-9
    assert np.all(H.contains(pts))


def test_so3_distance_closed_form_against_dense_sampling():
    G = SO3()
    H = builtin_subgroup(G, "so2_z")
    hs = H.element(np.linspace(-1, 1, 100_001)[:, None])
    for th in (0.1, 0.37, 0.8):
        g = G.exp(np.array([th, 0.0, 0.0]))
        dense = np.min(G.dist(g[None, :], hs))
        assert H.distance(g) == pytest.approx(th, abs=1e-9)
        assert dense == pytest.approx(th, abs=1e-6)
        assert distance_to_subgroup(g, H) == pytest.approx(th, abs=1e-9)


def test_distance_matches_sampled_minimum_random_points():
    rng = np.random.default_rng(3)
    for G in (SO3(), SU2()):
        H = builtin_subgroup(G)
        hs = H.element(np.linspace(-1, 1, 20_001)[:, None])
        for g in G.sample(rng, 10):
            dense = np.min(G.dist(g[None, :], hs))
            assert H.distance(g) == pytest.approx(dense, abs=1e-6)


def test_tube_measure_grows_to_one():
    G = SO3()
    H = builtin_subgroup(G)
    P = G.sample(np.random.default_rng(4), 100_000)
    fr = [np.mean(tube(H, d).contains(P)) for d in (0.1, 0.3, 0.49)]
    assert fr[0] < fr[1] < fr[2]
    # exact: mu(H_delta) = sin^2(pi delta / 2)
    assert fr[2] == pytest.approx(np.sin(np.pi * 0.49 / 2) ** 2, abs=0.01)


@pytest.mark.parametrize("name", ["so3", "su2", "t2"])
def test_tube_membership_and_two_sided_invariance(name):
    G = make_group(name)
    H = builtin_subgroup(G)
    T = tube(H, 0.1)
    rng = np.random.default_rng(5)
    P = G.sample(rng, 10_000)
    assert np.array_equal(T.contains(P), H.distance(P) < 0.1)
    h = H.sample(rng, 10_000)
    left = T.contains(G.mul(h, P))
    right = T.contains(G.mul(P, h))
    assert np.array_equal(left, right)
    assert np.array_equal(left, T.contains(P))


@given(h1=st.floats(-1, 1), a=st.floats(0, 0.99), b=st.floats(-0.99, 0.99), ang=st.floats(0, 6.28))
def test_rectangle_contains_its_defining_products(h1, a, b, ang):
    G = SO3()
    H = builtin_subgroup(G)
    delta, rho = 0.05, 0.1
    h = H.element(np.array([h1]))
    R = rectangle(H, h, delta, rho)
    v = a * delta * np.array([np.cos(ang), np.sin(ang), 0.0])
    w = np.array([0.0, 0.0, b * rho])
    g = G.mul(h, G.mul(G.exp(v), G.exp(w)))
    assert R.contains(g[None, :])[0]


def test_maximal_subgroups_and_names():
    assert [H.name for H in maximal_subgroups(SO3())] == ["so2_z"]
    assert "t1_x" in subgroup_names(Torus(2))
    assert builtin_subgroup(Torus(2), "t1_x").dim_h == 1
    with pytest.raises(UnknownSubgroup):
        builtin_subgroup(SO3(), "u1")


def test_tube_width_validation():
    with pytest.raises(ValueError):
        tube(builtin_subgroup(SO3()), 0.6)

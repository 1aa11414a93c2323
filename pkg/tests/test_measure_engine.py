import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lielab.group_core import SO3, SU2, Torus
from lielab.measure_engine import (
    CellSet, NetMismatch, NotInvariant, build_net, discretize, load_cellset, mc_measure, measure,
    minkowski_product, save_cellset, slice_set, translate,
)
from lielab.regions import Ball, Everything, Nothing, Rectangle
from lielab.subgroup_catalog import builtin_subgroup, tube

from oracles import (
    arc_sumset, arcs_region, box_sumset, boxes_region, random_arcs, random_boxes, union_area,
    union_length,
)

T1, T2 = Torus(1), Torus(2)


@pytest.fixture(scope="module")
def net_t1():
    return build_net(T1, 20_000)


@pytest.fixture(scope="module")
def net_t2():
    return build_net(T2, 10_000)


@pytest.fixture(scope="module")
def net_so3():
    return build_net(SO3(), 20_000)


def _inside(a, b):
    return not np.any(a & ~b)


def test_torus_net_geometry():
    net = build_net(T1, 1000)
    assert net.n_cells == 1000
    assert np.allclose(net.weights, 1e-3)
    # radius in turns: half a cell, 1/2000 of the circumference
    assert net.cell_radius * T1.diameter_raw == pytest.approx(1 / 2000)
    with pytest.raises(ValueError):
        build_net(T1, 10)


@pytest.mark.parametrize("name", ["box", "sample"])
def test_generic_nets_on_so3(name):
    net = build_net(SO3(), 5000, seed=1, kind=name)
    assert net.n_cells >= (5000 if name == "box" else 1)
    assert net.weights.sum() == pytest.approx(1.0)
    # every Haar point lies within its cell radius of the located center
    P = SO3().sample(np.random.default_rng(0), 5000)
    k = net.locate(P)
    assert np.all(SO3().dist(net.centers[k], P) <= net.radii[k] + 1e-12)


def test_full_and_empty(net_so3):
    full, empty = discretize(Everything(SO3()), net_so3), discretize(Nothing(SO3()), net_so3)
    assert full.inner.all() and full.outer.all()
    assert not empty.outer.any()
    m = measure(full)
    assert m.lower == pytest.approx(1.0) and m.upper == pytest.approx(1.0)
    assert measure(empty).upper == 0.0


def test_variants_are_nested(net_so3):
    A = discretize(Ball(SO3(), SO3().identity(), 0.3), net_so3)
    assert _inside(A.inner, A.nominal) and _inside(A.nominal, A.outer)


def test_torus_arc_bracket(net_t1):
    A = discretize(arcs_region(T1, [(0.3, 0.15)]), net_t1)
    m = measure(A)
    assert m.lower <= 0.3 <= m.upper
    assert m.upper - m.lower <= 4 * net_t1.cell_radius * T1.diameter_raw


def test_arc_products_exact(net_t1):
    for a, b in [(0.1, 0.2), (0.3, 0.4), (0.6, 0.7)]:
        A = discretize(arcs_region(T1, [(0.0, a / 2)]), net_t1)
        B = discretize(arcs_region(T1, [(0.5, b / 2)]), net_t1)
        m = measure(minkowski_product(A, B))
        assert m.lower <= min(a + b, 1.0) <= m.upper


def test_identity_factor_keeps_a_ball(net_so3):
    G = SO3()
    A = discretize(Ball(G, G.identity(), 0.3), net_so3)
    e = CellSet.from_mask(net_so3, np.isin(np.arange(net_so3.n_cells), net_so3.locate(G.identity()[None])))
    P = minkowski_product(A, e)
    grown = discretize(Ball(G, G.identity(), 0.3 + 2 * net_so3.cell_radius), net_so3)
    assert _inside(A.inner, P.outer)
    assert _inside(P.nominal, grown.outer)


@given(seed=st.integers(0, 10_000))
def test_bracket_soundness_t1(seed, net_t1):
    rng = np.random.default_rng(seed)
    A, B = random_arcs(rng, 2), random_arcs(rng, 2)
    a, b = discretize(arcs_region(T1, A), net_t1), discretize(arcs_region(T1, B), net_t1)
    m = measure(minkowski_product(a, b))
    ex = union_length(arc_sumset(A, B))
    assert m.lower - 1e-12 <= ex <= m.upper + 1e-12
    ma = measure(a)
    assert ma.lower - 1e-12 <= union_length(A) <= ma.upper + 1e-12


@given(seed=st.integers(0, 10_000))
def test_bracket_soundness_t2(seed, net_t2):
    rng = np.random.default_rng(seed)
    A, B = random_boxes(rng, 2), random_boxes(rng, 1)
    a, b = discretize(boxes_region(T2, A), net_t2), discretize(boxes_region(T2, B), net_t2)
    m = measure(minkowski_product(a, b))
    ex = union_area(box_sumset(A, B))
    assert m.lower - 1e-12 <= ex <= m.upper + 1e-12


@settings(max_examples=8)
@given(r1=st.floats(0.05, 0.2), extra=st.floats(0.0, 0.1), r2=st.floats(0.05, 0.2))
def test_product_is_monotone(r1, extra, r2):
    G = SO3()
    net_so3 = build_net(G, 5000)
    e = G.identity()
    A = discretize(Ball(G, e, r1), net_so3)
    A2 = discretize(Ball(G, e, r1 + extra), net_so3)
    B = discretize(Ball(G, e, r2), net_so3)
    P, P2 = minkowski_product(A, B), minkowski_product(A2, B)
    assert _inside(P.outer, P2.outer)
    assert measure(P).lower <= measure(P2).lower + 1e-12


def test_translation_invariance(net_so3):
    G = SO3()
    A = discretize(Ball(G, G.identity(), 0.25), net_so3)
    mA = measure(A)
    for g in G.sample(np.random.default_rng(4), 20):
        m = measure(translate(A, g))
        # brackets overlap and stay within one boundary layer
        assert m.lower <= mA.upper and mA.lower <= m.upper
        assert abs(m.estimate - mA.estimate) <= (mA.upper - mA.lower) + (m.upper - m.lower)


def test_translate_by_identity_and_back(net_so3):
    G = SO3()
    A = discretize(Ball(G, G.identity(), 0.25), net_so3)
    same = translate(A, G.identity())
    assert _inside(A.inner, same.inner | same.outer) and _inside(same.nominal, A.outer)
    g = G.sample(np.random.default_rng(9), 1)[0]
    back = translate(translate(A, g), G.inv(g))
    grown = discretize(Ball(G, G.identity(), 0.25 + 4 * net_so3.cell_radius), net_so3)
    assert _inside(back.nominal, grown.outer)


def test_lattice_translation_is_exact(net_t1):
    A = discretize(arcs_region(T1, [(0.2, 0.1)]), net_t1)
    m = measure(translate(A, np.array([0.37])))
    assert m.lower <= 0.2 <= m.upper


def test_product_associativity_up_to_dilation():
    G = SO3()
    net = build_net(G, 5000)
    e = G.identity()
    A, B, C = (discretize(Ball(G, e, r), net) for r in (0.15, 0.1, 0.12))
    left = minkowski_product(minkowski_product(A, B), C)
    right = minkowski_product(A, minkowski_product(B, C))
    grow = 2 * net.cell_radius
    L2 = discretize(Ball(G, e, 0.37 + grow + 4 * net.cell_radius), net)
    assert _inside(left.nominal, L2.outer) and _inside(right.nominal, L2.outer)
    assert _inside(left.inner, right.outer) and _inside(right.inner, left.outer)


def test_slice_of_full_tube_is_even():
    G = SO3()
    H = builtin_subgroup(G)
    net = build_net(G, 400_000, kind="hgrid", subgroup=H)
    A = discretize(tube(H, 0.05), net)
    vals = [measure(slice_set(A, H, h, 0.05, 0.1)) for h in H.sample(np.random.default_rng(0), 8)]
    mids = [0.5 * (v.lower + v.upper) for v in vals]
    assert max(mids) - min(mids) <= max(v.upper - v.lower for v in vals) + 1e-12


def test_slice_with_large_rho_and_empty():
    G = SO3()
    H = builtin_subgroup(G)
    net = build_net(G, 100_000, kind="hgrid", subgroup=H)
    A = discretize(tube(H, 0.05), net)
    full = slice_set(A, H, G.identity(), 0.05, 1.0)
    assert measure(full).lower == pytest.approx(measure(A).lower)
    empty = discretize(Nothing(G), net)
    assert measure(slice_set(empty, H, G.identity(), 0.05, 0.1)).upper == 0.0


def test_slice_on_generic_net_is_inside_both(net_so3):
    G = SO3()
    H = builtin_subgroup(G)
    A = discretize(tube(H, 0.1), net_so3)
    S = slice_set(A, H, G.identity(), 0.1, 0.2)
    R = discretize(Rectangle(H, G.identity(), 0.1, 0.2), net_so3)
    assert _inside(S.outer, A.outer & R.outer)
    assert _inside(S.inner, A.inner & R.inner)


def test_mc_measure():
    G = SO3()
    full = mc_measure(Everything(G), 2000, 0)
    assert full.upper == pytest.approx(1.0) and full.lower > 0.99
    exact = (0.3 * np.pi - np.sin(0.3 * np.pi)) / np.pi
    m = mc_measure(Ball(G, G.identity(), 0.3), 200_000, 1)
    assert m.lower <= exact <= m.upper
    H = builtin_subgroup(G)
    ms = [mc_measure(tube(H, d), 20_000, 2).estimate for d in (0.05, 0.1, 0.2)]
    assert ms[0] < ms[1] < ms[2]
    with pytest.raises(ValueError):
        mc_measure(Everything(G), 10, 0)


def test_cell_bracket_agrees_with_monte_carlo(net_so3):
    G = SO3()
    reg = Ball(G, G.identity(), 0.35)
    cb = measure(discretize(reg, net_so3))
    mc = mc_measure(reg, 100_000, 3)
    assert cb.lower <= mc.upper and mc.lower <= cb.upper


def test_reduced_nets_are_exact():
    G = SO3()
    H = builtin_subgroup(G)
    net = build_net(G, 100_000, kind="dcoset", subgroup=H)
    m = measure(discretize(tube(H, 0.05), net))
    # cell edges fall on delta, so the bracket closes up to rounding
    assert m.lower - 1e-12 <= np.sin(np.pi * 0.05 / 2) ** 2 <= m.upper + 1e-12
    cl = build_net(G, 100_000, kind="class")
    mb = measure(discretize(Ball(G, G.identity(), 0.2), cl))
    ex = (0.2 * np.pi - np.sin(0.2 * np.pi)) / np.pi
    assert mb.lower <= ex <= mb.upper
    with pytest.raises(NotInvariant):
        discretize(Ball(G, G.sample(np.random.default_rng(0), 1)[0], 0.2), cl)


def test_reduced_product_of_tubes_matches_the_cosine_law():
    G = SO3()
    H = builtin_subgroup(G)
    net = build_net(G, 100_000, kind="dcoset", subgroup=H)
    A = discretize(tube(H, 0.05), net)
    m = measure(minkowski_product(A, A))
    # H_a H_b = H_(a+b) for tubes around a subgroup
    assert m.lower <= np.sin(np.pi * 0.1 / 2) ** 2 <= m.upper


def test_su2_class_net_ball():
    G = SU2()
    cl = build_net(G, 100_000, kind="class")
    A = discretize(Ball(G, G.identity(), 0.1), cl)
    th = np.pi * 0.1
    ex = (2 * th - np.sin(2 * th)) / (2 * np.pi)
    m = measure(A)
    assert m.lower <= ex <= m.upper


def test_net_mismatch():
    a = discretize(Everything(T1), build_net(T1, 1000))
    b = discretize(Everything(T1), build_net(T1, 2000))
    with pytest.raises(NetMismatch):
        minkowski_product(a, b)
    with pytest.raises(NetMismatch):
        discretize(Everything(SO3()), build_net(T1, 1000))


def test_cellset_file_roundtrip(tmp_path, net_so3):
    G = SO3()
    A = discretize(Ball(G, G.identity(), 0.3), net_so3)
    p = tmp_path / "a.lbcs"
    save_cellset(A, p)
    B = load_cellset(p, net_so3)
    for role in ("inner", "nominal", "outer"):
        assert np.array_equal(A.variant(role), B.variant(role))
    with pytest.raises(NetMismatch):
        load_cellset(p, build_net(G, 5000))


def test_build_net_is_deterministic():
    a = build_net(SO3(), 3000, seed=5, kind="sample", cache=False)
    b = build_net(SO3(), 3000, seed=5, kind="sample", cache=False)
    assert a.net_hash == b.net_hash

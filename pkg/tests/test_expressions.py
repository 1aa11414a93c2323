import numpy as np
import pytest
from hypothesis import given, strategies as st

from lielab.expressions import GRAMMAR, ExprSyntaxError, Node, files_in, parse, region
from lielab.group_core import SO3, Torus
from lielab.subgroup_catalog import builtin_subgroup

T2 = Torus(2)

nums = st.floats(0.0, 0.99, allow_nan=False).map(lambda x: round(x, 4))
points = st.one_of(st.just("e"), st.tuples(nums, nums).map(lambda p: f"{p[0]!r},{p[1]!r}"))
radii = st.floats(0.01, 0.4).map(lambda x: round(x, 4))
leaves = st.one_of(
    st.builds(lambda p, r: f"ball:{p}:{r!r}", points, radii),
    st.builds(lambda h, d: f"tube:{h}:{d!r}", st.sampled_from(["t1_x", "t1_y"]), radii),
)
exprs = st.recursive(leaves, lambda inner: st.one_of(
    st.builds(lambda a, b: f"union({a},{b})", inner, inner),
    st.builds(lambda a, b: f"inter({a},{b})", inner, inner),
    st.builds(lambda a, p: f"translate({a},{p})", inner, points),
), max_leaves=6)


@given(text=exprs)
def test_descriptions_reparse_to_the_same_set(text):
    R = region(text, T2)
    R2 = region(R.description, T2)
    P = T2.sample(np.random.default_rng(0), 500)
    assert np.array_equal(R.contains(P), R2.contains(P))


def test_tree_shape():
    n = parse("union(ball:e:0.1, translate(tube:so2_z:0.05, 1,0,0,0))")
    assert n.op == "union"
    assert n.args[0] == Node("ball", (None, 0.1))
    assert n.args[1].op == "translate" and n.args[1].args[1] == (1.0, 0.0, 0.0, 0.0)


def test_rect_builds_on_so3():
    G = SO3()
    R = region("rect:so2_z:0.2:0.05:0.1", G)
    h = builtin_subgroup(G).element(np.array([0.2]))
    assert R.contains(h[None, :])[0]
    assert not R.contains(G.exp(np.array([0.3, 0.0, 0.0]))[None, :])[0]


@pytest.mark.parametrize("text,line,col", [
    ("tube:so2_z", 1, 11),
    ("ball:e", 1, 7),
    ("union(ball:e:0.1)", 1, 17),
    ("blob:1", 1, 1),
    ("ball:e:0.1 extra", 1, 12),
    ("union(ball:e:0.1,\n  tube:so2_z:)", 2, 14),
])
def test_errors_carry_position_and_grammar(text, line, col):
    with pytest.raises(ExprSyntaxError) as ei:
        parse(text)
    assert (ei.value.line, ei.value.column) == (line, col)
    assert GRAMMAR in str(ei.value)


def test_point_dimension_is_checked():
    with pytest.raises(ValueError):
        region("ball:0.1,0.2:0.1", SO3())


def test_file_leaves():
    n = parse("inter(file:a.cells,union(ball:e:0.1,file:dir/b.cells))")
    assert files_in(n) == ["a.cells", "dir/b.cells"]
    with pytest.raises(ValueError):
        region("file:a.cells", T2)

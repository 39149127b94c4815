import itertools

import pytest
from hypothesis import given, strategies as st

from dlg import ir, irtext
from dlg.ir import Distribution, meet

from conftest import ALL_FIXTURES, compiled

DISTS = list(Distribution)


@pytest.mark.parametrize("a,b", list(itertools.product(DISTS, DISTS)))
def test_meet_is_glb(a, b):
    m = meet(a, b)
    assert m <= a and m <= b
    assert meet(a, b) == meet(b, a)
    assert all(not (x <= a and x <= b) or x <= m for x in DISTS)


def test_short_names_round_trip():
    for d in DISTS:
        assert Distribution.from_short(d.short) is d
    assert [d.short for d in sorted(DISTS)] == ["REP", "2D_BC", "1D_B"]


def test_scalar_op_checks_arity():
    with pytest.raises(ValueError):
        ir.ScalarOp("+", (ir.Const(1),))
    with pytest.raises(ValueError):
        ir.ScalarOp("frobnicate", ())


def test_spans_do_not_affect_equality():
    a = ir.Var("x", ir.Span(1, 2))
    b = ir.Var("x", ir.Span(7, 9))
    assert a == b


def test_validate_flags_double_definition_and_undefined():
    sym = {"A": ir.ArrayType("f64", (3,)), "n": ir.ScalarType("i64")}
    body = (ir.Alloc("A", "f64", (ir.Const(3),)), ir.Alloc("A", "f64", (ir.Const(3),)),
            ir.Assign("n", ir.Var("missing")), ir.Return(()))
    problems = ir.validate(ir.FunctionIR("f", (), body, sym))
    assert any("multiple definitions" in p for p in problems)
    assert any("undefined variable missing" in p for p in problems)


def test_validate_gemm_shapes():
    sym = {"x": ir.ArrayType("f64", (2, 3)), "y": ir.ArrayType("f64", (4, 5)),
           "z": ir.ArrayType("f64", (2, 5))}
    body = (ir.Gemm("z", "x", False, "y", False), ir.Return(()))
    assert any("inner dims" in p for p in ir.validate(ir.FunctionIR("f", (), body, sym)))


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_fixture_stages_validate(name):
    c = compiled(name)
    for f in (c.frontend, c.lowering, c.optimizer):
        assert ir.validate(f) == []


@pytest.mark.parametrize("name", ALL_FIXTURES)
@pytest.mark.parametrize("stage", ["frontend", "lowering", "optimizer"])
def test_text_format_round_trips(name, stage):
    f = getattr(compiled(name), stage)
    assert irtext.parse_function(irtext.format_function(f)) == f


_leaf = st.one_of(st.integers(-5, 5).map(ir.Const),
                  st.floats(-1e3, 1e3, allow_nan=False).map(ir.Const),
                  st.sampled_from(["a", "b", "c"]).map(ir.Var))


def _extend(children):
    binary = st.tuples(st.sampled_from(["+", "-", "*", "/", "<", "min"]), children, children)
    return st.one_of(
        binary.map(lambda t: ir.ScalarOp(t[0], (t[1], t[2]))),
        children.map(lambda c: ir.ScalarOp("exp", (c,))),
        st.tuples(children, children).map(lambda t: ir.ArrayRead("A", t)),
    )


exprs = st.recursive(_leaf, _extend, max_leaves=12)


@given(exprs)
def test_expression_text_round_trip(e):
    assert irtext.parse_expr(irtext.read_sexpr(irtext.format_expr(e))) == e


@given(exprs)
def test_map_expr_identity(e):
    assert ir.map_expr(e, lambda x: x) == e


def test_rename_stmt_renames_everywhere():
    s = ir.Parfor(1, (ir.LoopNest("i", ir.Const(1), ir.Var("n")),), (),
                  (ir.ArrayWrite("A", (ir.Var("i"),), ir.ArrayRead("B", (ir.Var("i"),))),))
    r = ir.rename_stmt(s, {"i": "j", "A": "C", "n": "m"})
    assert r.index_var == "j"
    assert r.loop_nests[0].upper == ir.Var("m")
    assert r.body[0].array == "C"
    assert r.body[0].value.index == (ir.Var("j"),)

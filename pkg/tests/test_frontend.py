import pytest
from hypothesis import given, strategies as st

from dlg import ir, pipeline
from dlg.frontend import ast as A
from dlg.frontend.lower import DlgTypeError
from dlg.frontend.parser import DlgSyntaxError, parse, parse_expression

from conftest import ALL_FIXTURES, fixture_path, fixture_source


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_fixtures_parse(name):
    fn = parse(fixture_source(name), fixture_path(name))
    assert fn.name == name
    assert fn.entry


def test_operator_precedence():
    e = parse_expression("-x .^ 2")
    assert isinstance(e, A.Unary) and e.operand.op == ".^"
    e = parse_expression("2 ^ 3 ^ 2")
    assert e.right.op == "^"  # right associative
    e = parse_expression("a + b .* c'")
    assert e.op == "+" and e.right.op == ".*" and isinstance(e.right.right, A.Transpose)


@pytest.mark.parametrize("src,line,col,fragment", [
    ("function f(x)\n    y = (x + \nend\n", 3, 1, "expected expression"),
    ("function f(x)\n    y = x\n", 3, 1, "expected 'end'"),
])
def test_syntax_errors_carry_location(src, line, col, fragment):
    with pytest.raises(DlgSyntaxError) as ei:
        parse(src, "t.dlg")
    assert str(ei.value).startswith(f"t.dlg:{line}:{col}: ")
    assert fragment in str(ei.value)


@pytest.mark.parametrize("body,fragment", [
    ("    return y\n", "unknown identifier y"),
    ("    return foo(x)\n", "unknown function foo"),
    ("    A = DataSource(Matrix{f64}, \"a\", file)\n    B = DataSource(Vector{f64}, \"b\", file)\n"
     "    C = A .+ B\n    return C\n", "shape mismatch"),
    ("    A = DataSource(Matrix{f64}, \"a\", file)\n    B = A'\n    return B\n",
     "transpose is only supported"),
])
def test_type_errors(body, fragment):
    src = "function f(x, file)\n" + body + "end\n"
    with pytest.raises(DlgTypeError) as ei:
        pipeline.front(src, "t.dlg")
    assert fragment in str(ei.value)
    assert str(ei.value).startswith("t.dlg:")


def test_empty_function_lowers_to_bare_return():
    f = pipeline.front("function f()\nend\n")
    assert f.body == (ir.Return(()),)


def test_extern_becomes_unknown_call():
    f = pipeline.front(fixture_source("logistic_regression_extern"))
    calls = [e for s in ir.walk(f.body) for x in ir.stmt_exprs(s) for e in ir.sub_exprs(x)
             if isinstance(e, ir.UnknownCall)]
    assert [c.name for c in calls] == ["inspect_points"]


def test_param_types():
    f = pipeline.front(fixture_source("linear_regression"))
    kinds = {p: f.symbols[p].kind for p in f.params}
    assert kinds == {"iters": "i64", "alphaN": "f64", "file": "str"}


def test_matrix_product_becomes_gemm_with_transpose():
    f = pipeline.front(fixture_source("logistic_regression"))
    gemms = [s for s in ir.walk(f.body) if isinstance(s, ir.Gemm)]
    assert [(g.x_transposed, g.y_transposed) for g in gemms] == [(False, False), (False, True)]


def test_rand_sites_are_distinct():
    src = "function f(n::i64)\n    a = rand(n)\n    b = rand(n)\n    return a, b\nend\n"
    f = pipeline.front(src)
    sites = [s.rhs.args[0].value for s in f.body
             if isinstance(s, ir.Assign) and isinstance(s.rhs, ir.KnownCall) and s.rhs.name == "rand"]
    assert len(sites) == 2 and len(set(sites)) == 2


_names = st.sampled_from(["a", "b", "x1"])
_leaf = st.one_of(_names.map(A.Name), st.integers(0, 99).map(A.Num))


def _grow(children):
    ops = st.sampled_from(["+", "-", "*", "/", ".*", "./", ".+", ".^", "<", "=="])
    return st.one_of(
        st.tuples(ops, children, children).map(lambda t: A.BinOp(t[0], t[1], t[2])),
        children.map(lambda c: A.Call("exp", (c,))),
    )


@given(st.recursive(_leaf, _grow, max_leaves=10))
def test_show_parse_round_trip(e):
    assert parse_expression(A.show(e)) == e

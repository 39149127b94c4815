import pytest
from hypothesis import given, settings, strategies as st

from dlg import analysis, ir, optimizer, pipeline
from dlg.analysis import ONE_D, REP
from dlg.runtime.execute import run_sequential

from conftest import compiled, run_args


def _loop_parfors(c):
    (loop,) = [s for s in c.optimizer.body if isinstance(s, ir.ForLoop)]
    return [s for s in loop.body if isinstance(s, ir.Parfor)]


def test_logistic_regression_single_data_parallel_parfor():
    c = compiled("logistic_regression")
    pars = _loop_parfors(c)
    dist = [c.env.parfor_dist[p.id] for p in pars]
    assert dist.count(ONE_D) == 1
    assert [h for h, _ in c.fusion.heuristics_fired] == ["H1", "H1"]


def test_kmeans_single_pass_over_samples():
    c = compiled("kmeans")
    pars = _loop_parfors(c)
    over_samples = [p for p in pars if p.loop_nests[-1].upper == ir.Var("points.d2")]
    assert len(over_samples) == 1
    assert c.env.parfor_dist[over_samples[0].id] == ONE_D
    assert "H2" in [h for h, _ in c.fusion.heuristics_fired]


def test_kmeans_labels_become_scalar():
    c = compiled("kmeans")
    assert "labels" not in c.optimizer.symbols
    assert c.optimizer.symbols["labels.s"] == ir.ScalarType("i64")


def test_fusion_report_json_shape():
    import json
    rep = json.loads(compiled("logistic_regression").fusion.to_json())
    assert rep["parfors_before"] > rep["parfors_after"]
    assert all(len(g) >= 2 for g in rep["fused_groups"])


@pytest.mark.parametrize("name", ["logistic_regression", "linear_regression", "kmeans",
                                  "kernel_density"])
def test_optimizer_preserves_semantics(name, datadir):
    c = compiled(name)
    args = run_args(name, datadir)
    a = run_sequential(c.lowering, args, seed=9)
    b = run_sequential(c.optimizer, args, seed=9)
    assert a == b  # exact: the heuristics keep every accumulation order


def _parfor(pid, upper, body, reductions=()):
    return ir.Parfor(pid, (ir.LoopNest(f"i{pid}", ir.Const(1), ir.Var(upper)),), reductions, body)


def _ctx(pars, sym):
    env = analysis.DistEnv({n: ONE_D for n, t in sym.items() if isinstance(t, ir.ArrayType)},
                           {p.id: ONE_D for p in pars})
    f = ir.FunctionIR("f", (), tuple(pars) + (ir.Return(()),), sym)
    return optimizer._Ctx(f, env, optimizer.FusionReport())


SYM = {"A": ir.ArrayType("f64", ("n",)), "B": ir.ArrayType("f64", ("n",)),
       "C": ir.ArrayType("f64", ("n",)), "n": ir.ScalarType("i64"), "s": ir.ScalarType("f64")}


def test_can_fuse_same_index_dependence():
    a = _parfor(1, "n", (ir.ArrayWrite("A", (ir.Var("i1"),), ir.Const(1.0)),))
    b = _parfor(2, "n", (ir.ArrayWrite("B", (ir.Var("i2"),), ir.ArrayRead("A", (ir.Var("i2"),))),))
    ctx = _ctx([a, b], SYM)
    assert optimizer.can_fuse(a, b, ctx)
    fused = optimizer.fuse_two(a, b)
    assert fused.body[1].value == ir.ArrayRead("A", (ir.Var("i1"),))


def test_cannot_fuse_shifted_read():
    a = _parfor(1, "n", (ir.ArrayWrite("A", (ir.Var("i1"),), ir.Const(1.0)),))
    shifted = ir.ScalarOp("+", (ir.Var("i2"), ir.Const(1)))
    b = _parfor(2, "n", (ir.ArrayWrite("B", (ir.Var("i2"),), ir.ArrayRead("A", (shifted,))),))
    assert not optimizer.can_fuse(a, b, _ctx([a, b], SYM))


def test_cannot_fuse_different_bounds():
    a = _parfor(1, "n", (ir.ArrayWrite("A", (ir.Var("i1"),), ir.Const(1.0)),))
    b = _parfor(2, "m", (ir.ArrayWrite("B", (ir.Var("i2"),), ir.Const(2.0)),))
    assert not optimizer.can_fuse(a, b, _ctx([a, b], dict(SYM, m=ir.ScalarType("i64"))))


def test_cannot_fuse_reduction_consumer():
    red = ir.Reduction("s", 0.0, "sum")
    a = _parfor(1, "n", (ir.Assign("s", ir.ScalarOp("+", (ir.Var("s"), ir.ArrayRead("A", (ir.Var("i1"),))))),),
                (red,))
    b = _parfor(2, "n", (ir.ArrayWrite("B", (ir.Var("i2"),), ir.Var("s")),))
    assert not optimizer.can_fuse(a, b, _ctx([a, b], SYM))


def test_cannot_fuse_different_distributions():
    a = _parfor(1, "n", (ir.ArrayWrite("A", (ir.Var("i1"),), ir.Const(1.0)),))
    b = _parfor(2, "n", (ir.ArrayWrite("B", (ir.Var("i2"),), ir.Const(2.0)),))
    ctx = _ctx([a, b], SYM)
    ctx.env.parfor_dist[2] = REP
    assert not optimizer.can_fuse(a, b, ctx)


def test_fuse_block_hoists_allocations():
    a = _parfor(1, "n", (ir.ArrayWrite("A", (ir.Var("i1"),), ir.Const(1.0)),))
    alloc = ir.Alloc("B", "f64", (ir.Var("n"),))
    b = _parfor(2, "n", (ir.ArrayWrite("B", (ir.Var("i2"),), ir.ArrayRead("A", (ir.Var("i2"),))),))
    ctx = _ctx([a, b], SYM)
    out = optimizer.fuse_block([a, alloc, b], ctx)
    assert [type(s).__name__ for s in out] == ["Alloc", "Parfor"]
    assert ctx.report.fused_groups == [[1, 2]]


_OPS = [".+", ".-", ".*"]


_arr_expr = st.recursive(
    st.sampled_from(["a", "b", "2.0", "a"]),
    lambda ch: st.one_of(
        st.tuples(ch, st.sampled_from(_OPS), ch).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        ch.map(lambda c: f"exp(-({c}) .* ({c}))"),
    ),
    max_leaves=6,
).filter(lambda s: "a" in s or "b" in s)


@settings(max_examples=40, deadline=None)
@given(_arr_expr, st.booleans())
def test_random_elementwise_programs_are_preserved(expr, reduce):
    tail = "    s = sum(c)\n    return s\n" if reduce else "    return c\n"
    src = ("function f(n::i64)\n    a = rand(n)\n    b = rand(n)\n"
           f"    c = {expr}\n" + tail + "end\n")
    c = pipeline.compile_source(src)
    assert run_sequential(c.frontend, (13,), seed=2) == run_sequential(c.optimizer, (13,), seed=2)

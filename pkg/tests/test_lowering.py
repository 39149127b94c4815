import pytest

from dlg import ir, lowering, pipeline
from dlg.ir import PatternTag
from dlg.runtime.execute import run_sequential

from conftest import ALL_FIXTURES, compiled, run_args

PARFOR_TAGS = (PatternTag.MAP, PatternTag.REDUCE, PatternTag.CARTESIAN_MAP)


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_parfor_count_matches_tags(name):
    tagged = lowering.tag_patterns(compiled(name).frontend)
    counts = lowering.count_tags(tagged)
    lowered = lowering.lower_to_parfors(tagged)
    assert sum(1 for _ in ir.iter_parfors(lowered.body)) == sum(counts.get(t, 0) for t in PARFOR_TAGS)


def test_logistic_regression_tags():
    counts = lowering.count_tags(lowering.tag_patterns(compiled("logistic_regression").frontend))
    assert counts[PatternTag.GEMM] == 2
    assert counts[PatternTag.SERIAL] == 1
    assert counts[PatternTag.MAP] == 10


def test_kmeans_has_cartesian_maps():
    counts = lowering.count_tags(lowering.tag_patterns(compiled("kmeans").frontend))
    assert counts[PatternTag.CARTESIAN_MAP] == 3


@pytest.mark.parametrize("src,tag", [
    ("function f(n::i64)\n    a = rand(n)\n    b = a .* 2\n    return b\nend\n", PatternTag.MAP),
    ("function f(n::i64)\n    a = rand(n)\n    s = sum(a)\n    return s\nend\n", PatternTag.REDUCE),
    ("function f(n::i64)\n    a = [i * 2.0 for i in 1:n]\n    return a\nend\n",
     PatternTag.CARTESIAN_MAP),
])
def test_classify(src, tag):
    f = lowering.tag_patterns(pipeline.front(src))
    assert tag in lowering.count_tags(f)


def test_reduce_lowers_to_parfor_with_reduction():
    src = "function f(n::i64)\n    a = rand(n)\n    s = sum(a)\n    return s\nend\n"
    f = lowering.lower_to_parfors(lowering.tag_patterns(pipeline.front(src)))
    (p,) = list(ir.iter_parfors(f.body))
    assert [(r.combine, r.init) for r in p.reductions] == [("sum", 0.0)]


def test_gemm_is_left_in_place():
    f = compiled("logistic_regression").lowering
    assert sum(isinstance(s, ir.Gemm) for s in ir.walk(f.body)) == 2


@pytest.mark.parametrize("name", ["logistic_regression", "linear_regression", "kmeans",
                                  "kernel_density"])
def test_lowering_preserves_results_exactly(name, datadir):
    c = compiled(name)
    args = run_args(name, datadir)
    before = run_sequential(c.frontend, args, seed=5)
    after = run_sequential(c.lowering, args, seed=5)
    assert before == after


@pytest.mark.parametrize("op", ["sum", "prod", "minimum", "maximum"])
def test_reductions_exact(op):
    src = f"function f(n::i64)\n    a = rand(n)\n    s = {op}(a)\n    return s\nend\n"
    f0 = pipeline.front(src)
    f1 = lowering.lower_to_parfors(lowering.tag_patterns(f0))
    assert run_sequential(f0, (17,), seed=3) == run_sequential(f1, (17,), seed=3)

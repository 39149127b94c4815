import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from dlg import analysis, ir, pipeline
from dlg.analysis import ONE_D, REP, TWO_D

from conftest import ALL_FIXTURES, compiled

DISTS = (REP, TWO_D, ONE_D)


def _table(env, names):
    return {n: env.array_dist[n].short for n in names}


def test_logistic_regression_golden():
    env = compiled("logistic_regression").env
    assert _table(env, ["points", "labels", "w"]) == {"points": "1D_B", "labels": "1D_B",
                                                      "w": "REP"}


def test_kmeans_golden():
    env = compiled("kmeans").env
    assert _table(env, ["points", "centroids"]) == {"points": "1D_B", "centroids": "REP"}


def test_matrix_multiply_golden():
    env = compiled("matrix_multiply").env
    assert _table(env, ["M", "x", "y"]) == {"M": "2D_BC", "x": "2D_BC", "y": "2D_BC"}


def test_kernel_density_and_linreg():
    assert compiled("kernel_density").env["X"] == ONE_D
    env = compiled("linear_regression").env
    assert (env["points"], env["responses"], env["w"]) == (ONE_D, ONE_D, REP)


@pytest.mark.parametrize("x,y,xt,yt,lhs", list(itertools.product(DISTS, DISTS, [False, True],
                                                                  [False, True], DISTS)))
def test_gemm_rule_branches(x, y, xt, yt, lhs):
    b = analysis.gemm_branch(x, y, lhs, xt, yt)
    got = analysis.gemm_result(x, y, lhs, xt, yt)
    if x == ONE_D and y == ONE_D and not xt and yt:
        assert b == 1 and got == (REP, x, y, True)
    elif x != TWO_D and y == ONE_D and not yt and lhs == ONE_D:
        assert b == 2 and got == (lhs, REP, y, False)
    elif REP not in (x, y, lhs) and TWO_D in (x, y, lhs):
        assert b == 3 and got == (TWO_D, TWO_D, TWO_D, False)
    else:
        assert b == 4 and got == (REP, REP, REP, False)


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_fixed_point_within_bound(name):
    c = compiled(name)
    for f in (c.lowering, c.optimizer):
        env = analysis.analyze(f)
        assert env.sweeps <= analysis.sweep_bound(f)


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_order_independence(name):
    f = compiled(name).optimizer
    fwd = analysis.analyze(f)
    rev = analysis.analyze(f, reverse=True)
    assert fwd.key() == rev.key()


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_debug_history_is_monotone(name):
    env = analysis.analyze(compiled(name).lowering, debug=True)
    for before, after in zip(env.history, env.history[1:]):
        assert after.leq(before)


@pytest.mark.parametrize("name", ALL_FIXTURES)
def test_least_restrictive_solution(name):
    """Raising any single REP array to 1D_B is undone by one sweep."""
    f = compiled(name).optimizer
    env = analysis.analyze(f)
    for var in sorted(analysis.rep_vars(env)):
        trial = env.copy()
        trial.array_dist[var] = ONE_D
        analysis.sweep(f, trial)
        assert trial.array_dist[var] == REP, var


def _random_env(f, rng):
    env = analysis.initial_env(f)
    for k in env.array_dist:
        env.array_dist[k] = rng.choice(DISTS)
    for k in env.parfor_dist:
        env.parfor_dist[k] = rng.choice(DISTS)
    return env


_STMTS = [(name, s) for name in ALL_FIXTURES
          for stage in ("lowering", "optimizer")
          for s in ir.walk(getattr(compiled(name), stage).body)]


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, len(_STMTS) - 1), st.integers(0, 2**32))
def test_transfer_functions_non_increasing(k, seed):
    name, s = _STMTS[k]
    c = compiled(name)
    f = c.optimizer if any(s is t for t in ir.walk(c.optimizer.body)) else c.lowering
    env = _random_env(f, random.Random(seed))
    after = env.copy()
    analysis.apply_stmt(after, s)
    assert after.leq(env)


def test_pure_transfer_wrappers_do_not_mutate():
    env = analysis.DistEnv({"a": ONE_D, "b": REP})
    out = analysis.transfer_assignment("a", "b", env)
    assert env["a"] == ONE_D and out["a"] == REP
    out = analysis.transfer_call(ir.UnknownCall("f", (ir.Var("a"),)), env)
    assert env["a"] == ONE_D and out["a"] == REP
    assert out.provenance["a"].cause == "unknown call f"


def test_extern_call_forces_rep_with_provenance():
    env = compiled("logistic_regression_extern").env
    assert env["points"] == REP
    p = env.provenance["points"]
    assert "inspect_points" in p.cause and p.span.line == 8


def test_explain_chains_through_sources():
    env = compiled("logistic_regression").env
    lines = analysis.explain(env, "w")
    assert lines[0].startswith("w: forced REP by ")
    assert analysis.explain(env, "points") == ["points: 1D_B (maximally parallel)"]
    with pytest.raises(KeyError):
        analysis.explain(env, "bogus")


def test_explain_parfor():
    env = compiled("logistic_regression").env
    assert analysis.explain(env, "parfor#3") == ["parfor#3: 1D_B (maximally parallel)"]
    assert "accesses replicated array w" in analysis.explain(env, "parfor#10")[0]


def test_returned_arrays_are_replicated():
    src = "function f(n::i64)\n    a = rand(n)\n    b = a .+ 1\n    return b\nend\n"
    f = pipeline.compile_source(src).optimizer
    env = analysis.analyze(f)
    assert env["b"] == REP
    assert env.provenance["b"].cause == analysis.CAUSE_RETURN


def test_non_convergence_is_reported():
    f = compiled("logistic_regression").lowering
    with pytest.raises(analysis.NonConvergence):
        analysis.analyze(f, max_sweeps=1)


def test_partition_annotation_seeds_two_d():
    env = analysis.initial_env(compiled("matrix_multiply").lowering)
    assert env["M"] == TWO_D and env["x"] == ONE_D

import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlg import ir, pipeline
from dlg.runtime import arrays, datafile, rng
from dlg.runtime.arrays import Array, BoundsError, DlgRuntimeError
from dlg.runtime.codegen import generate
from dlg.runtime.execute import DEFAULT_SEED, default_seed, run_sequential, run_spmd
from dlg.runtime.world import CollectiveMismatch, DivergenceDetected, partition


# -- arrays ----------------------------------------------------------------------------

def test_column_major_indexing():
    a = Array("f64", (2, 3), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    assert arrays.rd2(a, 2, 1) == 2.0 and arrays.rd2(a, 1, 3) == 5.0
    arrays.wr2(a, 2, 3, 9.0)
    assert a.tolist() == [[1.0, 3.0, 5.0], [2.0, 4.0, 9.0]]


@pytest.mark.parametrize("i,j", [(0, 1), (3, 1), (1, 4), (1, 0)])
def test_bounds_checked(i, j):
    a = Array.filled("f64", (2, 3))
    with pytest.raises(BoundsError):
        arrays.rd2(a, i, j)


def test_ieee_helpers():
    assert arrays.div(1.0, 0.0) == math.inf and arrays.div(-1.0, 0.0) == -math.inf
    assert math.isnan(arrays.div(0.0, 0.0))
    assert arrays.exp(1e6) == math.inf
    assert arrays.log(0.0) == -math.inf and math.isnan(arrays.log(-1.0))
    assert math.isnan(arrays.sqrt(-1.0))
    assert arrays.power(10.0, 400.0) == math.inf


def test_gemm_matches_numpy():
    r = np.random.default_rng(0)
    x, y = r.standard_normal((3, 4)), r.standard_normal((5, 4))
    X = Array("f64", x.shape, x.reshape(-1, order="F").tolist())
    Y = Array("f64", y.shape, y.reshape(-1, order="F").tolist())
    Z = arrays.gemm(X, False, Y, True)
    np.testing.assert_allclose(np.array(Z.data).reshape(Z.dims, order="F"), x @ y.T, rtol=1e-12)


# -- random numbers -----------------------------------------------------------------------

@given(st.integers(0, 2**63), st.integers(0, 100), st.integers(0, 50), st.integers(0, 40))
def test_rng_blocks_match_full_stream(seed, site, start, count):
    full = rng.uniform(seed, site, 0, 0, start + count)
    assert rng.uniform(seed, site, 0, start, count) == full[start:]
    assert rng.normal(seed, site, 0, start, count) == rng.normal(seed, site, 0, 0, start + count)[start:]


def test_rng_range_and_streams_differ():
    u = rng.uniform(1, 1, 0, 0, 1000)
    assert all(0.0 <= x < 1.0 for x in u)
    assert u != rng.uniform(1, 1, 1, 0, 1000)
    assert u != rng.uniform(1, 2, 0, 0, 1000)
    assert abs(sum(u) / len(u) - 0.5) < 0.05


# -- data files ------------------------------------------------------------------------------

def test_datafile_round_trip(tmp_path):
    path = str(tmp_path / "a.dlgd")
    datafile.write_datafile(path, "f64", (2, 3), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    assert datafile.read_header(path) == ("f64", (2, 3))
    assert datafile.block_read(path, 1, 2) == ("f64", (2, 2), [3.0, 4.0, 5.0, 6.0])


def test_datafile_errors(tmp_path):
    with pytest.raises(datafile.IoError, match="file not found"):
        datafile.read_header(str(tmp_path / "nope"))
    bad = tmp_path / "bad"
    bad.write_bytes(b"XXXX")
    with pytest.raises(datafile.IoError):
        datafile.read_header(str(bad))
    path = str(tmp_path / "v")
    datafile.write_datafile(path, "i64", (4,), [1, 2, 3, 4])
    with pytest.raises(arrays.ShapeMismatch):
        datafile.block_read(path, 3, 2)


def test_dataset_path_directory_and_prefix(tmp_path):
    assert datafile.dataset_path(str(tmp_path), "points") == os.path.join(str(tmp_path), "points.dlgd")
    assert datafile.dataset_path("/x/data", "points") == "/x/data.points.dlgd"


# -- execution ----------------------------------------------------------------------------------

def test_default_seed_env(monkeypatch):
    monkeypatch.delenv("DLG_SEED", raising=False)
    assert default_seed() == DEFAULT_SEED
    monkeypatch.setenv("DLG_SEED", "77")
    assert default_seed() == 77
    src = "function f(n::i64)\n    a = rand(n)\n    return a\nend\n"
    f = pipeline.front(src)
    assert run_sequential(f, (4,)) == run_sequential(f, (4,), seed=77)


def test_input_coercion_errors():
    f = pipeline.front("function f(n::i64)\n    return n\nend\n")
    assert run_sequential(f, {"n": 3.0}) == (3,)
    with pytest.raises(ValueError, match="cannot convert"):
        run_sequential(f, ("abc",))
    with pytest.raises(ValueError, match="takes 1"):
        run_sequential(f, ())


def test_runtime_error_points_at_source_line():
    src = "function f(n::i64)\n    a = zeros(n)\n    x = a[n + 1]\n    return x\nend\n"
    f = pipeline.front(src)
    with pytest.raises(BoundsError) as ei:
        run_sequential(f, (3,))
    assert ei.value.span.line == 3


def test_missing_extern_is_reported(datadir):
    from conftest import compiled, run_args
    c = compiled("logistic_regression_extern")
    with pytest.raises(DlgRuntimeError, match="inspect_points"):
        run_sequential(c.optimizer, run_args("logistic_regression_extern", datadir))
    got = run_sequential(c.optimizer, run_args("logistic_regression_extern", datadir),
                         externs={"inspect_points": lambda a: sum(a.data)})
    assert len(got) == 1


def test_generated_source_has_line_table():
    f = pipeline.compile_source("function f(n::i64)\n    a = rand(n)\n    s = sum(a)\n"
                                "    return s\nend\n").optimizer
    prog = generate(f)
    assert prog.source.startswith("def _dlg_main(rt, v_n):")
    assert {s.line for s in prog.line_spans.values()} >= {2, 3, 4}


# -- collectives --------------------------------------------------------------------------------

def _fn(body, sym):
    sym = dict(sym)
    return ir.FunctionIR("g", ("n",), tuple(body), dict(sym, n=ir.ScalarType("i64")))


_SYM = {"bs": ir.ScalarType("i64"), "s": ir.ScalarType("f64"), "k": ir.ScalarType("i64")}


def _uneven_loop(after):
    return [ir.Assign("bs", ir.KnownCall("block_size", (ir.Var("n"),))),
            ir.Assign("s", ir.Const(1.0)),
            ir.ForLoop("k", ir.Const(1), ir.Var("bs"), (ir.Allreduce("s", "sum"),)),
            *after, ir.Return(("s",))]


def test_rank_leaving_early_is_a_mismatch():
    f = _fn(_uneven_loop([]), _SYM)
    with pytest.raises(CollectiveMismatch, match="finished while"):
        run_spmd(f, 2, (3,))


def test_different_collectives_are_a_mismatch():
    f = _fn(_uneven_loop([ir.CoherenceCheck(("s",))]), _SYM)
    with pytest.raises(CollectiveMismatch, match="mismatch"):
        run_spmd(f, 2, (3,))


def test_divergent_replicated_value_detected():
    body = [ir.Assign("s", ir.KnownCall("block_start", (ir.Var("n"),))),
            ir.CoherenceCheck(("s",)), ir.Return(("s",))]
    f = _fn(body, _SYM)
    with pytest.raises(DivergenceDetected, match="rank"):
        run_spmd(f, 3, (9,))
    assert run_spmd(f, 1, (9,)) == (0,)


@pytest.mark.parametrize("nranks", [1, 2, 3, 5])
def test_allreduce_combines_in_rank_order(nranks):
    body = [ir.Assign("s", ir.KnownCall("block_size", (ir.Var("n"),))),
            ir.Allreduce("s", "sum"), ir.Return(("s",))]
    f = _fn(body, _SYM)
    results = run_spmd(f, nranks, (11,), all_ranks=True)
    assert results == [(11,)] * nranks


def test_error_on_one_rank_aborts_the_world():
    # rank 1 owns a single element and reads past it while rank 0 waits in the allreduce
    body = [ir.Assign("bs", ir.KnownCall("block_size", (ir.Var("n"),))),
            ir.Assign("a", ir.KnownCall("zeros", (ir.Var("bs"),))),
            ir.Assign("s", ir.ArrayRead("a", (ir.Const(2),))),
            ir.Allreduce("s", "sum"), ir.Return(("s",))]
    f = _fn(body, dict(_SYM, a=ir.ArrayType("f64", (1,))))
    assert run_spmd(f, 2, (4,)) == (0.0,)
    with pytest.raises(BoundsError):
        run_spmd(f, 2, (3,))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 64), st.integers(1, 8))
def test_partition_matches_block_helpers(total, p):
    blocks = [partition(total, p, r) for r in range(p)]
    assert sum(s for _, s in blocks) == total
    assert max(s for _, s in blocks) - min(s for _, s in blocks) <= 1
    assert [b for b, _ in blocks] == [sum(s for _, s in blocks[:r]) for r in range(p)]

import json
from importlib import resources

import jsonschema
import pytest

from conftest import fixture_path
from dlg import cli, pipeline

SCHEMA = json.loads(resources.files("dlg").joinpath("schema/cli-output.schema.json").read_text())


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--format", "json")
    assert code == 0, err
    doc = json.loads(out)
    jsonschema.validate(doc, SCHEMA)
    return doc


@pytest.fixture(scope="module")
def lldata(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen-data", "labeled-linear", str(d / "ll"), "--n", "200", "--d", "3",
                     "--seed", "5"]) == 0
    return str(d / "ll")


def test_analyze_text_and_json(capsys):
    code, out, _ = run(capsys, "analyze", fixture_path("logistic_regression"))
    assert code == 0 and "points" in out and "1D_B" in out
    doc = run_json(capsys, "analyze", fixture_path("kmeans"))
    rows = {r["name"]: r["distribution"] for r in doc["distributions"]}
    assert rows["points"] == "1D_B" and rows["centroids"] == "REP"


def test_explain_extern(capsys):
    code, out, _ = run(capsys, "explain", fixture_path("logistic_regression_extern"), "points")
    assert code == 0 and "inspect_points" in out
    doc = run_json(capsys, "explain", fixture_path("logistic_regression"), "w")
    assert doc["distribution"] == "REP" and doc["lines"]


def test_explain_unknown_variable(capsys):
    code, _, err = run(capsys, "explain", fixture_path("logistic_regression"), "bogus")
    assert code == 1 and "unknown variable" in err


@pytest.mark.parametrize("stage", pipeline.STAGES)
def test_compile_dump_after(capsys, stage):
    code, out, _ = run(capsys, "compile", fixture_path("logistic_regression"), "--dump-after", stage)
    assert code == 0 and out.startswith("(function")
    run_json(capsys, "compile", fixture_path("logistic_regression"), "--dump-after", stage,
             "--dump-dist", "--fusion-report", "--emit-spmd-source")


def test_compile_matmul_notes_unsupported(capsys):
    doc = run_json(capsys, "compile", fixture_path("matrix_multiply"))
    assert doc["spmd"] is False and any("ScaLAPACK" in n for n in doc["notes"])
    code, _, err = run(capsys, "compile", fixture_path("matrix_multiply"), "--emit-spmd-source")
    assert code == 1 and "ScaLAPACK" in err


def test_run_ranks_agree(capsys, lldata):
    one = run_json(capsys, "run", fixture_path("logistic_regression"), 4, lldata, "--nranks", 1)
    four = run_json(capsys, "run", fixture_path("logistic_regression"), 4, lldata, "--nranks", 4)
    seq = run_json(capsys, "run", fixture_path("logistic_regression"), 4, lldata, "--sequential")
    a, b = one["outputs"][0]["value"], four["outputs"][0]["value"]
    assert a == seq["outputs"][0]["value"]
    assert max(abs(x - y) for x, y in zip(a, b)) / max([1.0] + [abs(x) for x in a]) <= 1e-8


def test_run_writes_out_file(capsys, lldata, tmp_path):
    out = tmp_path / "o.json"
    code, stdout, _ = run(capsys, "run", fixture_path("linear_regression"), 3, 0.01, lldata,
                          "--format", "json", "--out", out)
    assert code == 0 and stdout == ""
    jsonschema.validate(json.loads(out.read_text()), SCHEMA)


def test_fail_then_restart(capsys, lldata, tmp_path):
    prog = fixture_path("logistic_regression")
    want = run_json(capsys, "run", prog, 6, lldata, "--nranks", 2)
    code, _, err = run(capsys, "run", prog, 6, lldata, "--nranks", 2, "--checkpoint-dir", tmp_path,
                       "--checkpoint-interval", 0, "--fail-at-iteration", 4)
    assert code == 1 and "injected failure at iteration 4" in err
    got = run_json(capsys, "restart", prog, 6, lldata, "--nranks", 2, "--checkpoint-dir", tmp_path)
    assert got["outputs"] == want["outputs"]


def test_restart_requires_directory(capsys, lldata):
    code, _, err = run(capsys, "restart", fixture_path("logistic_regression"), 2, lldata)
    assert code == 1 and "--checkpoint-dir" in err


def test_missing_file(capsys):
    code, _, err = run(capsys, "run", "missing-file.dlg")
    assert code == 1 and "file not found" in err


def test_syntax_error_diagnostic(capsys, tmp_path):
    p = tmp_path / "bad.dlg"
    p.write_text("function f(n::i64)\n    x = (1 +\nend\n")
    code, _, err = run(capsys, "analyze", p)
    assert code == 1
    loc = err.split("error: ", 1)[1].split(":")
    assert loc[0] == str(p) and loc[1].isdigit() and loc[2].isdigit()


def test_runtime_error_diagnostic(capsys, tmp_path):
    p = tmp_path / "oob.dlg"
    p.write_text("function f(n::i64)\n    a = zeros(n)\n    x = a[n + 1]\n    return x\nend\n")
    code, _, err = run(capsys, "run", p, 2, "--sequential")
    assert code == 1 and f"{p}:3:" in err


def test_bad_argument_value(capsys, lldata):
    code, _, err = run(capsys, "run", fixture_path("logistic_regression"), "six", lldata)
    assert code == 1 and "error:" in err


def test_internal_error_exit_code(capsys, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("invariant broken")
    monkeypatch.setattr(pipeline, "compile_file", boom)
    code, _, err = run(capsys, "analyze", fixture_path("kmeans"))
    assert code == 2 and "internal error" in err


def test_seed_from_environment(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("DLG_SEED", "123")
    doc = run_json(capsys, "gen-data", "gaussian", tmp_path / "a", "--n", 10)
    assert doc["seed"] == 123
    monkeypatch.delenv("DLG_SEED")
    run_json(capsys, "gen-data", "gaussian", tmp_path / "b", "--n", 10, "--seed", 123)
    assert (tmp_path / "a.points.dlgd").read_bytes() == (tmp_path / "b.points.dlgd").read_bytes()


@pytest.mark.parametrize("kind", ["gaussian", "labeled-linear", "blobs"])
def test_gen_data_deterministic(capsys, tmp_path, kind):
    a = run_json(capsys, "gen-data", kind, tmp_path / "a", "--n", 50, "--d", 2, "--seed", 9)
    b = run_json(capsys, "gen-data", kind, tmp_path / "b", "--n", 50, "--d", 2, "--seed", 9)
    for fa, fb in zip(a["files"], b["files"]):
        with open(fa, "rb") as x, open(fb, "rb") as y:
            assert x.read() == y.read()


def test_blob_labels_in_range(tmp_path):
    from dlg.runtime import datafile
    assert cli.main(["gen-data", "blobs", str(tmp_path / "b"), "--n", "40", "--d", "2",
                     "--k", "4", "--seed", "1"]) == 0
    path = str(tmp_path / "b.labels.dlgd")
    _, dims = datafile.read_header(path)
    _, _, labels = datafile.block_read(path, 0, dims[-1])
    assert dims == (40,) and set(labels) == {1.0, 2.0, 3.0, 4.0}

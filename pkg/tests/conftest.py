import functools
import os

import pytest

from dlg import datagen, pipeline

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "src", "dlg", "fixtures")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, f"{name}.dlg")


def fixture_source(name: str) -> str:
    with open(fixture_path(name), encoding="utf-8") as fh:
        return fh.read()


@functools.lru_cache(maxsize=None)
def compiled(name: str) -> pipeline.Compilation:
    return pipeline.compile_file(fixture_path(name))


ALL_FIXTURES = ("logistic_regression", "linear_regression", "kmeans", "kernel_density",
                "matrix_multiply", "logistic_regression_extern")


@pytest.fixture(scope="session")
def datadir(tmp_path_factory):
    """Small datasets shared by the run tests."""
    d = tmp_path_factory.mktemp("data")
    datagen.labeled_linear(str(d / "ll"), 300, 4, seed=11)
    datagen.blobs(str(d / "bl"), 150, 2, k=3, seed=12)
    datagen.gaussian(str(d / "g"), 400, 0, seed=13)
    datagen.gaussian(str(d / "m1"), 6, 6, seed=14, dataset="M")
    datagen.gaussian(str(d / "m2"), 3, 6, seed=15, dataset="x")
    return d


def run_args(name: str, d) -> tuple:
    return {
        "logistic_regression": (6, str(d / "ll")),
        "logistic_regression_extern": (6, str(d / "ll")),
        "linear_regression": (6, 0.001, str(d / "ll")),
        "kmeans": (3, 4, str(d / "bl")),
        "kernel_density": (0.4, str(d / "g")),
    }[name]


def rel_err(a, b) -> float:
    """max|a - b| / max(1, max|a|) over the elements of two results."""
    xs = a.data if hasattr(a, "data") else [a]
    ys = b.data if hasattr(b, "data") else [b]
    assert len(xs) == len(ys)
    scale = max([1.0] + [abs(x) for x in xs])
    return max(abs(x - y) for x, y in zip(xs, ys)) / scale

"""Synthetic dataset generators for the example programs."""
from __future__ import annotations

import numpy as np

from .runtime.datafile import dataset_path, write_datafile

GENERATORS = ("gaussian", "labeled-linear", "blobs")


def _write(file: str, name: str, values: np.ndarray) -> str:
    path = dataset_path(file, name)
    # column-major payload: the last extent is the sample axis
    write_datafile(path, "f64", values.shape, values.reshape(-1, order="F").tolist())
    return path


def gaussian(file: str, n: int, d: int = 0, *, seed: int = 0, dataset: str = "points") -> list:
    """Standard normal samples: a vector of length ``n`` when ``d == 0``,
    otherwise a ``d x n`` matrix."""
    rng = np.random.default_rng(seed)
    shape = (n,) if d == 0 else (d, n)
    return [_write(file, dataset, rng.standard_normal(shape))]


def labeled_linear(file: str, n: int, d: int, *, seed: int = 0) -> list:
    """``points`` (d x n), ``labels`` in {-1, 1} from a noisy linear separator
    and real-valued ``responses`` from the same linear model."""
    rng = np.random.default_rng(seed)
    points = rng.standard_normal((d, n))
    truth = rng.standard_normal(d)
    score = truth @ points
    labels = np.where(score + 0.1 * rng.standard_normal(n) >= 0, 1.0, -1.0)
    responses = score + 0.01 * rng.standard_normal(n)
    return [_write(file, "points", points), _write(file, "labels", labels),
            _write(file, "responses", responses)]


def blobs(file: str, n: int, d: int, *, k: int = 3, seed: int = 0, spread: float = 0.5) -> list:
    """``points`` (d x n) drawn around ``k`` well separated centers, plus the
    1-based blob of every sample as ``labels``; sample j belongs to blob
    ``j % k + 1``."""
    rng = np.random.default_rng(seed)
    centers = 10.0 * np.arange(k)[None, :] + rng.uniform(-1, 1, (d, k))
    owner = np.arange(n) % k
    points = centers[:, owner] + spread * rng.standard_normal((d, n))
    return [_write(file, "points", points), _write(file, "labels", owner + 1.0)]


def generate(kind: str, file: str, n: int, d: int = 0, *, k: int = 3, seed: int = 0,
             dataset: str = "points") -> list:
    if kind == "gaussian":
        return gaussian(file, n, d, seed=seed, dataset=dataset)
    if kind == "labeled-linear":
        return labeled_linear(file, n, d or 1, seed=seed)
    if kind == "blobs":
        return blobs(file, n, d or 1, k=k, seed=seed)
    raise ValueError(f"unknown generator {kind!r} (choose from {', '.join(GENERATORS)})")

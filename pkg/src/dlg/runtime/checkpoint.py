"""Checkpoint files, the interval policy and failure injection.

File layout (little-endian): ``b"DLGC"``, int64 iteration, uint32 variable
count, then per variable: uint16 name length, UTF-8 name, uint8 kind
(0 float64, 1 int64, 2 bool), uint8 rank (0 for scalars), int64 extents and
the payload; finally a uint64 holding the number of bytes before it.
Files live at ``<dir>/<function>/<iteration>.ckpt`` and are written to a
temporary name first, then renamed, so a crash never leaves a partial file
under the final name.
"""
from __future__ import annotations

import math
import os
import struct
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .arrays import Array, DlgRuntimeError

MAGIC = b"DLGC"
_KINDS = {"f64": 0, "i64": 1, "bool": 2}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}
_DT = {"f64": np.dtype("<f8"), "i64": np.dtype("<i8"), "bool": np.dtype("u1")}


class CorruptCheckpoint(DlgRuntimeError):
    pass


class SimulatedFailure(DlgRuntimeError):
    """Raised by the fault injector to abort a run mid-loop."""


def young_interval(checkpoint_cost: float, mtbf: float) -> float:
    """Young's first-order optimum checkpoint interval, sqrt(2 * cost * MTBF)."""
    if not checkpoint_cost > 0 or not mtbf > 0:
        raise ValueError("checkpoint cost and MTBF must be positive")
    return math.sqrt(2.0 * checkpoint_cost * mtbf)


class CostEstimator:
    """Running mean of observed checkpoint costs, seeded by an initial guess."""

    def __init__(self, initial: float):
        if not initial > 0:
            raise ValueError("initial checkpoint cost estimate must be positive")
        self.total = initial
        self.count = 1

    def observe(self, seconds: float) -> None:
        self.total += max(seconds, 0.0)
        self.count += 1

    @property
    def estimate(self) -> float:
        return max(self.total / self.count, 1e-9)


def _kind_of(value) -> str:
    if isinstance(value, Array):
        return value.elem
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "i64"
    return "f64"


def encode(iteration: int, variables: dict) -> bytes:
    parts = [MAGIC, struct.pack("<qI", iteration, len(variables))]
    for name, value in variables.items():
        raw = name.encode("utf-8")
        kind = _kind_of(value)
        if isinstance(value, Array):
            dims, data = value.dims, value.data
        else:
            dims, data = (), [value]
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _KINDS[kind], len(dims)))
        parts.append(struct.pack(f"<{len(dims)}q", *dims))
        parts.append(np.asarray(data, dtype=_DT[kind]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", len(body))


def decode(blob: bytes):
    """Return (iteration, {name: value}); raises CorruptCheckpoint."""
    try:
        if len(blob) < 24 or blob[:4] != MAGIC:
            raise CorruptCheckpoint("bad checkpoint magic")
        (length,) = struct.unpack("<Q", blob[-8:])
        if length != len(blob) - 8:
            raise CorruptCheckpoint("checkpoint length mismatch")
        iteration, count = struct.unpack("<qI", blob[4:16])
        pos = 16
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", blob[pos:pos + 2])
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            kind_id, nd = struct.unpack("<BB", blob[pos:pos + 2])
            pos += 2
            kind = _KIND_NAMES[kind_id]
            dims = struct.unpack(f"<{nd}q", blob[pos:pos + 8 * nd])
            pos += 8 * nd
            n = math.prod(dims) if nd else 1
            dt = _DT[kind]
            vals = np.frombuffer(blob[pos:pos + n * dt.itemsize], dtype=dt)
            if len(vals) != n:
                raise CorruptCheckpoint("truncated checkpoint payload")
            pos += n * dt.itemsize
            data = [bool(v) for v in vals] if kind == "bool" else vals.tolist()
            out[name] = Array(kind, dims, data) if nd else data[0]
        if pos != len(blob) - 8:
            raise CorruptCheckpoint("trailing bytes in checkpoint")
        return iteration, out
    except (struct.error, KeyError, UnicodeDecodeError, ValueError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint: {exc}") from None


class CheckpointStore:
    def __init__(self, root: str, function: str):
        self.dir = os.path.join(root, function)

    def path(self, iteration: int) -> str:
        return os.path.join(self.dir, f"{iteration}.ckpt")

    def write(self, iteration: int, variables: dict) -> str:
        os.makedirs(self.dir, exist_ok=True)
        final = self.path(iteration)
        tmp = final + f".tmp{os.getpid()}"
        with open(tmp, "wb") as fh:
            fh.write(encode(iteration, variables))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, final)
        # older checkpoints are superseded once the new one is durable
        for it in self.iterations():
            if it != iteration:
                try:
                    os.remove(self.path(it))
                except FileNotFoundError:
                    pass
        return final

    def iterations(self) -> list:
        if not os.path.isdir(self.dir):
            return []
        out = []
        for name in os.listdir(self.dir):
            stem, ext = os.path.splitext(name)
            if ext == ".ckpt" and stem.lstrip("-").isdigit():
                out.append(int(stem))
        return sorted(out)

    def latest(self):
        """(iteration, vars) of the newest readable checkpoint, or None.

        A corrupt newest file is reported and older ones are not consulted:
        the caller then starts from scratch."""
        its = self.iterations()
        if not its:
            return None
        with open(self.path(its[-1]), "rb") as fh:
            blob = fh.read()
        return decode(blob)

    def cleanup(self) -> None:
        for it in self.iterations():
            try:
                os.remove(self.path(it))
            except FileNotFoundError:
                pass
        if os.path.isdir(self.dir):
            for name in os.listdir(self.dir):
                if ".ckpt.tmp" in name:
                    os.remove(os.path.join(self.dir, name))
            try:
                os.rmdir(self.dir)
            except OSError:
                pass


@dataclass
class CheckpointPolicy:
    """When to write checkpoints and when to inject a failure.

    ``interval`` overrides the Young interval when given (0 checkpoints at
    every iteration)."""

    directory: str | None = None
    mtbf: float = 3600.0
    cost_estimate: float = 1.0
    interval: float | None = None
    fail_at_iteration: int | None = None
    clock: Callable[[], float] = time.monotonic
    written: list = field(default_factory=list)

    def __post_init__(self):
        self.estimator = CostEstimator(self.cost_estimate)
        self.last = None

    def current_interval(self) -> float:
        if self.interval is not None:
            return self.interval
        return young_interval(self.estimator.estimate, self.mtbf)

    def due(self) -> bool:
        now = self.clock()
        if self.last is None:
            self.last = now
        return now - self.last >= self.current_interval()

    def record(self, started: float, finished: float) -> None:
        self.estimator.observe(finished - started)
        self.last = finished


def load_latest(store: CheckpointStore):
    """Latest checkpoint or None; a corrupt file triggers a warning and None."""
    try:
        return store.latest()
    except CorruptCheckpoint as exc:
        warnings.warn(f"ignoring checkpoint in {store.dir}: {exc.message}", RuntimeWarning,
                      stacklevel=2)
        return None

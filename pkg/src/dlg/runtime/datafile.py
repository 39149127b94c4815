"""Binary dataset files.

Layout: ``b"DLG1"``, one byte element kind (0 float64, 1 int64, 2 bool),
one byte rank, then each extent as a little-endian int64, then the payload in
column-major order. A block of the last dimension is a contiguous byte range,
which is what makes per-rank block reads cheap.

A dataset name maps to a file: ``file`` itself when it has an extension,
otherwise ``<file>.<dataset>.dlgd``.
"""
from __future__ import annotations

import math
import os
import struct

import numpy as np

from .arrays import Array, DlgRuntimeError, ShapeMismatch

MAGIC = b"DLG1"
KINDS = {"f64": 0, "i64": 1, "bool": 2}
KIND_NAMES = {v: k for k, v in KINDS.items()}
DTYPES = {"f64": np.dtype("<f8"), "i64": np.dtype("<i8"), "bool": np.dtype("u1")}


class IoError(DlgRuntimeError):
    pass


def dataset_path(file: str, dataset: str) -> str:
    name = dataset.strip("/")
    if os.path.isdir(file):
        return os.path.join(file, f"{name}.dlgd")
    return f"{file}.{name}.dlgd"


def header_size(ndims: int) -> int:
    return 6 + 8 * ndims


def write_datafile(path: str, elem: str, dims, data) -> None:
    dims = tuple(int(d) for d in dims)
    arr = np.asarray(data, dtype=DTYPES[elem])
    if arr.size != math.prod(dims):
        raise ShapeMismatch(f"payload has {arr.size} elements, dims {list(dims)}")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<BB", KINDS[elem], len(dims)))
        fh.write(struct.pack(f"<{len(dims)}q", *dims))
        fh.write(arr.reshape(-1).tobytes())


def read_header(path: str):
    """Return (elem, dims)."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(6)
            if len(head) != 6 or head[:4] != MAGIC:
                raise IoError(f"{path}: not a dataset file")
            kind, nd = struct.unpack("<BB", head[4:])
            if kind not in KIND_NAMES or nd not in (1, 2):
                raise IoError(f"{path}: bad dataset header")
            raw = fh.read(8 * nd)
            if len(raw) != 8 * nd:
                raise IoError(f"{path}: truncated header")
            dims = struct.unpack(f"<{nd}q", raw)
    except FileNotFoundError:
        raise IoError(f"file not found: {path}") from None
    return KIND_NAMES[kind], tuple(dims)


def _convert(values: np.ndarray, elem: str) -> list:
    if elem == "bool":
        return [bool(v) for v in values]
    return values.tolist()


def block_read(path: str, start: int, size: int):
    """Read columns ``start+1 .. start+size`` (all leading extents).

    Returns (elem, local dims, flat list)."""
    elem, dims = read_header(path)
    last = dims[-1]
    if not (0 <= start <= start + size <= last):
        raise ShapeMismatch(f"{path}: block [{start}, {start + size}) outside extent {last}")
    lead = math.prod(dims[:-1])
    dt = DTYPES[elem]
    offset = header_size(len(dims)) + start * lead * dt.itemsize
    count = size * lead
    with open(path, "rb") as fh:
        fh.seek(offset)
        raw = fh.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise IoError(f"{path}: truncated payload")
    values = np.frombuffer(raw, dtype=dt)
    return elem, dims[:-1] + (size,), _convert(values, elem)


def read_datafile(path: str):
    elem, dims = read_header(path)
    return block_read(path, 0, dims[-1])


def read_array(path: str) -> Array:
    elem, dims, data = read_datafile(path)
    return Array(elem, dims, data)


def block_write(path: str, elem: str, dims, blocks) -> None:
    """Write an array given as consecutive last-dimension blocks (in rank order)."""
    flat = []
    for b in blocks:
        flat.extend(b)
    write_datafile(path, elem, dims, flat)

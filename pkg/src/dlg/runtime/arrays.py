"""Dense column-major arrays and the scalar helpers generated code calls.

Arrays hold a flat Python list; element (i, j) of a d1 x d2 array lives at
``(i - 1) + (j - 1) * d1``. Scalar helpers follow IEEE semantics where Python
would raise (division by zero, overflow, domain errors).
"""
from __future__ import annotations

import math


class DlgRuntimeError(Exception):
    """A failure while executing a program; ``span`` locates the statement."""

    def __init__(self, message: str, span=None):
        self.message = message
        self.span = span
        where = f"{span.line}:{span.col}: " if span is not None and span.line else ""
        super().__init__(where + message)


class BoundsError(DlgRuntimeError):
    pass


class ShapeMismatch(DlgRuntimeError):
    pass


_ZERO = {"f64": 0.0, "i64": 0, "bool": False}


class Array:
    __slots__ = ("elem", "dims", "data", "d1", "n")

    def __init__(self, elem: str, dims, data: list):
        self.elem = elem
        self.dims = tuple(int(d) for d in dims)
        self.data = data
        self.d1 = self.dims[0]
        self.n = len(data)

    @classmethod
    def filled(cls, elem, dims, value=None) -> "Array":
        dims = tuple(int(d) for d in dims)
        if any(d < 0 for d in dims):
            raise ShapeMismatch(f"negative array extent {list(dims)}")
        n = math.prod(dims)
        return cls(elem, dims, [(_ZERO[elem] if value is None else value)] * n)

    def __repr__(self):
        return f"Array({self.elem}, {list(self.dims)}, {self.data!r})"

    def __eq__(self, other):
        return isinstance(other, Array) and self.dims == other.dims and self.data == other.data

    def copy(self) -> "Array":
        return Array(self.elem, self.dims, list(self.data))

    def tolist(self):
        """Nested rows for display: a vector or a list of rows."""
        if len(self.dims) == 1:
            return list(self.data)
        d1, d2 = self.dims
        return [[self.data[i + j * d1] for j in range(d2)] for i in range(d1)]


def alloc(elem: str, *dims) -> Array:
    return Array.filled(elem, dims)


def rd1(a: Array, i):
    if 1 <= i <= a.n:
        return a.data[i - 1]
    raise BoundsError(f"index [{i}] out of bounds for array of size {list(a.dims)}")


def rd2(a: Array, i, j):
    d1 = a.d1
    if 1 <= i <= d1 and 1 <= j and (k := i - 1 + (j - 1) * d1) < a.n:
        return a.data[k]
    raise BoundsError(f"index [{i}, {j}] out of bounds for array of size {list(a.dims)}")


def wr1(a: Array, i, v):
    if 1 <= i <= a.n:
        a.data[i - 1] = v
        return
    raise BoundsError(f"index [{i}] out of bounds for array of size {list(a.dims)}")


def wr2(a: Array, i, j, v):
    d1 = a.d1
    if 1 <= i <= d1 and 1 <= j and (k := i - 1 + (j - 1) * d1) < a.n:
        a.data[k] = v
        return
    raise BoundsError(f"index [{i}, {j}] out of bounds for array of size {list(a.dims)}")


# -- IEEE-safe scalar operations ------------------------------------------------------

def div(a, b):
    try:
        return a / b
    except ZeroDivisionError:
        if a != a or a == 0:
            return math.nan
        neg = (a < 0) != (math.copysign(1.0, b) < 0)
        return -math.inf if neg else math.inf


def power(a, b):
    try:
        r = a ** b
    except ZeroDivisionError:
        return math.inf
    except OverflowError:
        return math.inf
    if isinstance(r, complex):
        return math.nan
    return r


def exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def log(x):
    if x > 0:
        return math.log(x)
    if x == 0:
        return -math.inf
    return math.nan


def sqrt(x):
    return math.sqrt(x) if x >= 0 else math.nan


def sin(x):
    return math.sin(x) if math.isfinite(x) else math.nan


def cos(x):
    return math.cos(x) if math.isfinite(x) else math.nan


def ifloat(v):
    return float(v)


# -- whole-array operations (used before lowering) ----------------------------------------

def check_same_dims(arrays, what="elementwise operation"):
    dims = arrays[0].dims
    for a in arrays[1:]:
        if a.dims != dims:
            raise ShapeMismatch(f"{what}: shape {list(dims)} vs {list(a.dims)}")
    return dims


def fold(combine: str, a: Array):
    if combine == "sum":
        acc = 0.0
        for x in a.data:
            acc = acc + x
    elif combine == "prod":
        acc = 1.0
        for x in a.data:
            acc = acc * x
    elif combine == "min":
        acc = math.inf
        for x in a.data:
            acc = min(acc, x)
    elif combine == "max":
        acc = -math.inf
        for x in a.data:
            acc = max(acc, x)
    else:
        raise DlgRuntimeError(f"unknown reduction {combine}")
    return acc


def gemm(x: Array, xt: bool, y: Array, yt: bool) -> Array:
    """op(x) * op(y) with a naive loop; the accumulation order matches the
    loop nests the optimizer produces."""
    if len(x.dims) != 2 or len(y.dims) != 2:
        raise ShapeMismatch("matrix multiply operands must be matrices")
    xm, xk = (x.dims[1], x.dims[0]) if xt else x.dims
    yk, yn = (y.dims[1], y.dims[0]) if yt else y.dims
    if xk != yk:
        raise ShapeMismatch(f"matrix multiply inner dims {xk}≠{yk}")
    xd, yd, x1, y1 = x.data, y.data, x.dims[0], y.dims[0]
    out = [0.0] * (xm * yn)
    for b in range(yn):
        for a in range(xm):
            acc = 0.0
            for k in range(xk):
                xv = xd[k + a * x1] if xt else xd[a + k * x1]
                yv = yd[b + k * y1] if yt else yd[k + b * y1]
                acc = acc + xv * yv
            out[a + b * xm] = acc
    return Array("f64", (xm, yn), out)


def reshape(a: Array, *dims) -> Array:
    dims = tuple(int(d) for d in dims)
    if math.prod(dims) != a.n:
        raise ShapeMismatch(f"cannot reshape array of size {list(a.dims)} to {list(dims)}")
    return Array(a.elem, dims, a.data)


def vector(*items) -> Array:
    return Array("f64", (len(items),), [float(v) for v in items])


def combine_values(combine: str, a, b):
    if combine == "sum":
        return a + b
    if combine == "prod":
        return a * b
    if combine == "min":
        return min(a, b)
    if combine == "max":
        return max(a, b)
    raise DlgRuntimeError(f"unknown reduction {combine}")

"""Typed intermediate representation shared by every pass.

Nodes are frozen dataclasses; passes build new trees with ``replace``.
Source spans ride along on every node but never take part in equality.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterator, Union


class Distribution(enum.IntEnum):
    """Lattice value; integer order is the lattice order (bottom first)."""

    REPLICATED = 0
    TWO_D_BLOCK_CYCLIC = 1
    ONE_D_BLOCK = 2

    @property
    def short(self) -> str:
        return _SHORT[self]

    @classmethod
    def from_short(cls, text: str) -> "Distribution":
        for k, v in _SHORT.items():
            if v == text:
                return k
        return cls[text]


_SHORT = {
    Distribution.REPLICATED: "REP",
    Distribution.TWO_D_BLOCK_CYCLIC: "2D_BC",
    Distribution.ONE_D_BLOCK: "1D_B",
}

BOTTOM = Distribution.REPLICATED
TOP = Distribution.ONE_D_BLOCK


def meet(a: Distribution, b: Distribution) -> Distribution:
    """Greatest lower bound; the order is total so this is ``min``."""
    return a if a <= b else b


class PatternTag(enum.Enum):
    MAP = "map"
    REDUCE = "reduce"
    CARTESIAN_MAP = "cartesian_map"
    GEMM = "gemm"
    SERIAL = "serial"


@dataclass(frozen=True)
class Span:
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


NO_SPAN = Span()


def _span():
    return field(default=NO_SPAN, compare=False, repr=False)


# -- types -----------------------------------------------------------------

SCALAR_KINDS = ("f64", "i64", "bool", "str")
ELEM_KINDS = ("f64", "i64", "bool")

Extent = Union[int, str]


@dataclass(frozen=True)
class ScalarType:
    kind: str = "f64"

    def __post_init__(self):
        if self.kind not in SCALAR_KINDS:
            raise ValueError(f"unknown scalar kind {self.kind!r}")


@dataclass(frozen=True)
class ArrayType:
    """Column-major array; the last extent is the partitionable one."""

    elem: str
    dims: tuple

    def __post_init__(self):
        if self.elem not in ELEM_KINDS:
            raise ValueError(f"unknown element kind {self.elem!r}")
        if len(self.dims) not in (1, 2):
            raise ValueError("only 1D and 2D arrays are supported")

    @property
    def ndims(self) -> int:
        return len(self.dims)


Type = Union[ScalarType, ArrayType]


def extent_expr(ext: Extent, span: Span = NO_SPAN) -> "Expr":
    return Const(ext, span) if isinstance(ext, int) else Var(ext, span)


def expr_extent(e: "Expr") -> Extent | None:
    if isinstance(e, Const) and isinstance(e.value, int) and not isinstance(e.value, bool):
        return e.value
    if isinstance(e, Var):
        return e.name
    return None


# -- expressions -------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: object
    span: Span = _span()


@dataclass(frozen=True)
class Var:
    name: str
    span: Span = _span()


# op -> arity; comparisons yield 1.0/0.0 at runtime
SCALAR_OPS = {
    "+": 2, "-": 2, "*": 2, "/": 2, "^": 2,
    "==": 2, "!=": 2, "<": 2, "<=": 2, ">": 2, ">=": 2,
    "&&": 2, "||": 2, "min": 2, "max": 2,
    "neg": 1, "not": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1,
    "sin": 1, "cos": 1, "select": 3,
}
UNARY_FUNCS = ("exp", "log", "sqrt", "abs", "sin", "cos")


@dataclass(frozen=True)
class ScalarOp:
    op: str
    args: tuple
    span: Span = _span()

    def __post_init__(self):
        arity = SCALAR_OPS.get(self.op)
        if arity is None:
            raise ValueError(f"unknown scalar op {self.op!r}")
        if arity != len(self.args):
            raise ValueError(f"{self.op} takes {arity} operands, got {len(self.args)}")


@dataclass(frozen=True)
class ArrayRead:
    array: str
    index: tuple
    span: Span = _span()


@dataclass(frozen=True)
class KnownCall:
    name: str
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class UnknownCall:
    name: str
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class LoopNest:
    var: str
    lower: "Expr"
    upper: "Expr"


@dataclass(frozen=True)
class Comprehension:
    """Cartesian map; ``body`` writes the element(s) of the assigned array."""

    nests: tuple
    body: tuple
    span: Span = _span()


Expr = Union[Const, Var, ScalarOp, ArrayRead, KnownCall, UnknownCall, Comprehension]

# -- statements ----------------------------------------------------------------

REDUCTION_COMBINES = {"sum": 0.0, "prod": 1.0, "min": float("inf"), "max": float("-inf")}


@dataclass(frozen=True)
class Reduction:
    var: str
    init: float
    combine: str

    def __post_init__(self):
        if self.combine not in REDUCTION_COMBINES:
            raise ValueError(f"unknown reduction combine {self.combine!r}")


@dataclass(frozen=True)
class Assign:
    lhs: str | None
    rhs: Expr
    span: Span = _span()
    tag: PatternTag | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ArrayWrite:
    array: str
    index: tuple
    value: Expr
    span: Span = _span()


@dataclass(frozen=True)
class Alloc:
    array: str
    elem: str
    dims: tuple
    span: Span = _span()


@dataclass(frozen=True)
class LocalAlloc:
    array: str
    elem: str
    dims: tuple
    span: Span = _span()


@dataclass(frozen=True)
class DataSource:
    array: str
    dataset: str
    file: Expr
    span: Span = _span()


@dataclass(frozen=True)
class DataSink:
    array: str
    dataset: str
    file: Expr
    span: Span = _span()


@dataclass(frozen=True)
class Gemm:
    out: str
    x: str
    x_transposed: bool
    y: str
    y_transposed: bool
    span: Span = _span()
    tag: PatternTag | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ForLoop:
    var: str
    lower: Expr
    upper: Expr
    body: tuple
    span: Span = _span()
    tag: PatternTag | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Parfor:
    id: int
    loop_nests: tuple
    reductions: tuple
    body: tuple
    span: Span = _span()

    @property
    def index_var(self) -> str:
        return self.loop_nests[-1].var


@dataclass(frozen=True)
class Return:
    vars: tuple
    span: Span = _span()


@dataclass(frozen=True)
class PartitionAnnotation:
    array: str
    kind: str = "2D"
    span: Span = _span()


# Nodes introduced by the distributed and checkpoint passes.

@dataclass(frozen=True)
class Allreduce:
    var: str
    combine: str
    span: Span = _span()


@dataclass(frozen=True)
class BlockRead:
    array: str
    dataset: str
    file: Expr
    start: Expr
    size: Expr
    span: Span = _span()


@dataclass(frozen=True)
class BlockWrite:
    array: str
    dataset: str
    file: Expr
    start: Expr
    size: Expr
    total: Expr
    span: Span = _span()


@dataclass(frozen=True)
class Checkpoint:
    index_var: str
    vars: tuple
    span: Span = _span()


@dataclass(frozen=True)
class CheckpointCleanup:
    span: Span = _span()


@dataclass(frozen=True)
class Restore:
    index_var: str
    vars: tuple
    start_var: str
    default_start: Expr
    span: Span = _span()


@dataclass(frozen=True)
class CoherenceCheck:
    vars: tuple
    span: Span = _span()


Stmt = Union[Assign, ArrayWrite, Alloc, LocalAlloc, DataSource, DataSink, Gemm, ForLoop,
             Parfor, Return, PartitionAnnotation, Allreduce, BlockRead, BlockWrite,
             Checkpoint, CheckpointCleanup, Restore, CoherenceCheck]


@dataclass
class FunctionIR:
    name: str
    params: tuple
    body: tuple
    symbols: dict
    span: Span = field(default=NO_SPAN, compare=False, repr=False)

    @property
    def return_stmt(self) -> Return:
        returns = [s for s in self.body if isinstance(s, Return)]
        if len(returns) != 1:
            raise ValueError(f"{self.name}: expected exactly one return, found {len(returns)}")
        return returns[0]

    def arrays(self) -> list:
        return [n for n, t in self.symbols.items() if isinstance(t, ArrayType)]

    def with_body(self, body, symbols=None) -> "FunctionIR":
        return FunctionIR(self.name, self.params, tuple(body),
                          dict(self.symbols if symbols is None else symbols), self.span)


# -- traversal helpers ---------------------------------------------------------------

_BODY_NODES = (ForLoop, Parfor)


def child_bodies(s) -> list:
    if isinstance(s, _BODY_NODES):
        return [s.body]
    if isinstance(s, Assign) and isinstance(s.rhs, Comprehension):
        return [s.rhs.body]
    return []


def walk(body) -> Iterator:
    """Pre-order walk over statements, descending into loop and parfor bodies."""
    for s in body:
        yield s
        for b in child_bodies(s):
            yield from walk(b)


def iter_parfors(body) -> Iterator[Parfor]:
    for s in walk(body):
        if isinstance(s, Parfor):
            yield s


def sub_exprs(e) -> Iterator:
    yield e
    if isinstance(e, ScalarOp):
        for a in e.args:
            yield from sub_exprs(a)
    elif isinstance(e, ArrayRead):
        for a in e.index:
            yield from sub_exprs(a)
    elif isinstance(e, (KnownCall, UnknownCall)):
        for a in e.args:
            yield from sub_exprs(a)
    elif isinstance(e, Comprehension):
        for n in e.nests:
            yield from sub_exprs(n.lower)
            yield from sub_exprs(n.upper)


def stmt_exprs(s) -> list:
    """Expressions held directly by a statement (not by nested bodies)."""
    if isinstance(s, Assign):
        return [s.rhs]
    if isinstance(s, ArrayWrite):
        return [*s.index, s.value]
    if isinstance(s, (Alloc, LocalAlloc)):
        return list(s.dims)
    if isinstance(s, (DataSource, DataSink)):
        return [s.file]
    if isinstance(s, ForLoop):
        return [s.lower, s.upper]
    if isinstance(s, Parfor):
        return [x for n in s.loop_nests for x in (n.lower, n.upper)]
    if isinstance(s, BlockRead):
        return [s.file, s.start, s.size]
    if isinstance(s, BlockWrite):
        return [s.file, s.start, s.size, s.total]
    if isinstance(s, Restore):
        return [s.default_start]
    return []


def free_vars(e) -> set:
    out = set()
    for x in sub_exprs(e):
        if isinstance(x, Var):
            out.add(x.name)
        elif isinstance(x, ArrayRead):
            out.add(x.array)
    return out


def array_accesses(body) -> Iterator:
    """Yield (array, index tuple, is_write) for every element access in ``body``."""
    for s in walk(body):
        if isinstance(s, ArrayWrite):
            yield s.array, s.index, True
        for e in stmt_exprs(s):
            for x in sub_exprs(e):
                if isinstance(x, ArrayRead):
                    yield x.array, x.index, False


def stmt_defs(s) -> set:
    """Names a statement (including nested bodies) defines or writes."""
    out = set()
    for t in walk([s]):
        if isinstance(t, Assign) and t.lhs is not None:
            out.add(t.lhs)
        elif isinstance(t, (ArrayWrite, Alloc, LocalAlloc, DataSource, BlockRead)):
            out.add(t.array)
        elif isinstance(t, Gemm):
            out.add(t.out)
        elif isinstance(t, ForLoop):
            out.add(t.var)
        elif isinstance(t, Parfor):
            out.update(n.var for n in t.loop_nests)
            out.update(r.var for r in t.reductions)
        elif isinstance(t, Allreduce):
            out.add(t.var)
        elif isinstance(t, Restore):
            out.update(t.vars)
            out.update((t.index_var, t.start_var))
    return out


def stmt_uses(s) -> set:
    """Names a statement (including nested bodies) reads."""
    out = set()
    for t in walk([s]):
        for e in stmt_exprs(t):
            out |= free_vars(e)
        if isinstance(t, Gemm):
            out.update((t.x, t.y))
        elif isinstance(t, (DataSink, BlockWrite)):
            out.add(t.array)
        elif isinstance(t, Return):
            out.update(t.vars)
        elif isinstance(t, Allreduce):
            out.add(t.var)
        elif isinstance(t, Checkpoint):
            out.update(t.vars)
            out.add(t.index_var)
        elif isinstance(t, Assign) and isinstance(t.rhs, Comprehension):
            out |= set().union(*[stmt_uses(b) for b in t.rhs.body]) if t.rhs.body else set()
    return out


# -- rewriting ---------------------------------------------------------------------

def map_expr(e, fn: Callable):
    """Rebuild ``e`` bottom-up, applying ``fn`` to every node."""
    if isinstance(e, ScalarOp):
        e = replace(e, args=tuple(map_expr(a, fn) for a in e.args))
    elif isinstance(e, ArrayRead):
        e = replace(e, index=tuple(map_expr(a, fn) for a in e.index))
    elif isinstance(e, (KnownCall, UnknownCall)):
        e = replace(e, args=tuple(map_expr(a, fn) for a in e.args))
    elif isinstance(e, Comprehension):
        e = replace(e, nests=tuple(LoopNest(n.var, map_expr(n.lower, fn), map_expr(n.upper, fn))
                                   for n in e.nests),
                    body=tuple(map_stmt_exprs(s, fn) for s in e.body))
    return fn(e)


def map_stmt_exprs(s, fn: Callable):
    """Apply ``map_expr(., fn)`` to every expression in ``s`` and its nested bodies."""
    m = lambda e: map_expr(e, fn)  # noqa: E731
    if isinstance(s, Assign):
        return replace(s, rhs=m(s.rhs))
    if isinstance(s, ArrayWrite):
        return replace(s, index=tuple(m(a) for a in s.index), value=m(s.value))
    if isinstance(s, (Alloc, LocalAlloc)):
        return replace(s, dims=tuple(m(d) for d in s.dims))
    if isinstance(s, (DataSource, DataSink)):
        return replace(s, file=m(s.file))
    if isinstance(s, ForLoop):
        return replace(s, lower=m(s.lower), upper=m(s.upper),
                       body=tuple(map_stmt_exprs(b, fn) for b in s.body))
    if isinstance(s, Parfor):
        return replace(s, loop_nests=tuple(LoopNest(n.var, m(n.lower), m(n.upper))
                                           for n in s.loop_nests),
                       body=tuple(map_stmt_exprs(b, fn) for b in s.body))
    if isinstance(s, BlockRead):
        return replace(s, file=m(s.file), start=m(s.start), size=m(s.size))
    if isinstance(s, BlockWrite):
        return replace(s, file=m(s.file), start=m(s.start), size=m(s.size), total=m(s.total))
    if isinstance(s, Restore):
        return replace(s, default_start=m(s.default_start))
    return s


def rename_stmt(s, mapping: dict):
    """Rename variables (scalars, arrays, loop indices) throughout ``s``."""
    if not mapping:
        return s
    r = lambda n: mapping.get(n, n)  # noqa: E731

    def fix(e):
        if isinstance(e, Var) and e.name in mapping:
            return replace(e, name=mapping[e.name])
        if isinstance(e, ArrayRead) and e.array in mapping:
            return replace(e, array=mapping[e.array])
        return e

    s = map_stmt_exprs(s, fix)
    if isinstance(s, Assign):
        rhs = s.rhs
        if isinstance(rhs, Comprehension):
            rhs = replace(rhs, nests=tuple(replace(n, var=r(n.var)) for n in rhs.nests),
                          body=tuple(rename_stmt(b, mapping) for b in rhs.body))
        return replace(s, lhs=r(s.lhs) if s.lhs else None, rhs=rhs)
    if isinstance(s, (ArrayWrite, Alloc, LocalAlloc, DataSource, DataSink, BlockRead, BlockWrite)):
        return replace(s, array=r(s.array))
    if isinstance(s, Gemm):
        return replace(s, out=r(s.out), x=r(s.x), y=r(s.y))
    if isinstance(s, ForLoop):
        return replace(s, var=r(s.var), body=tuple(rename_stmt(b, mapping) for b in s.body))
    if isinstance(s, Parfor):
        return replace(s, loop_nests=tuple(replace(n, var=r(n.var)) for n in s.loop_nests),
                       reductions=tuple(replace(x, var=r(x.var)) for x in s.reductions),
                       body=tuple(rename_stmt(b, mapping) for b in s.body))
    if isinstance(s, Return):
        return replace(s, vars=tuple(r(v) for v in s.vars))
    if isinstance(s, Allreduce):
        return replace(s, var=r(s.var))
    if isinstance(s, PartitionAnnotation):
        return replace(s, array=r(s.array))
    return s


# -- validation -----------------------------------------------------------------------

def _ext_eq(a: Extent, b: Extent) -> bool:
    return a == b


def gemm_shape(sym: dict, g: Gemm):
    """Return ((m, k), (k2, n)) operand shapes after applying transposes."""
    xd = sym[g.x].dims
    yd = sym[g.y].dims
    if len(xd) != 2 or len(yd) != 2:
        raise ValueError("matrix multiply operands must be 2D")
    xm, xk = (xd[1], xd[0]) if g.x_transposed else (xd[0], xd[1])
    yk, yn = (yd[1], yd[0]) if g.y_transposed else (yd[0], yd[1])
    return (xm, xk), (yk, yn)


def validate(f: FunctionIR) -> list:
    """Structural checks. Returns a list of violation messages; empty means ok."""
    problems = []
    sym = f.symbols
    defsites = {}
    returns = [s for s in f.body if isinstance(s, Return)]
    if len(returns) != 1:
        problems.append(f"expected exactly one return, found {len(returns)}")
    allocated = {s.array for s in walk(f.body) if isinstance(s, (Alloc, LocalAlloc))}
    for s in walk(f.body):
        # a DataSource fills the array allocated just before it
        if isinstance(s, (Alloc, LocalAlloc)) or (isinstance(s, DataSource) and s.array not in allocated):
            if s.array in defsites:
                problems.append(f"multiple definitions of array {s.array} "
                                f"(lines {defsites[s.array].line} and {s.span.line})")
            else:
                defsites[s.array] = s.span
        if isinstance(s, Gemm):
            missing = [n for n in (s.out, s.x, s.y) if n not in sym]
            if missing:
                continue
            try:
                (m, k), (k2, n) = gemm_shape(sym, s)
            except ValueError as exc:
                problems.append(str(exc))
                continue
            if not _ext_eq(k, k2):
                problems.append(f"gemm {s.out}: inner dims {k}≠{k2}")
            od = sym[s.out].dims
            if len(od) != 2 or not (_ext_eq(od[0], m) and _ext_eq(od[1], n)):
                problems.append(f"gemm {s.out}: output dims {list(od)} do not match [{m}, {n}]")
    local = set()
    for s in walk(f.body):
        local |= {n.var for n in getattr(s, "loop_nests", ())}
        if isinstance(s, ForLoop):
            local.add(s.var)
        if isinstance(s, Assign) and isinstance(s.rhs, Comprehension):
            local |= {n.var for n in s.rhs.nests}
    names = set(sym) | set(f.params) | local
    for s in walk(f.body):
        for n in (stmt_uses(s) | stmt_defs(s)) - names:
            problems.append(f"undefined variable {n} at line {s.span.line}")
            names.add(n)
    return problems

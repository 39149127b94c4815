"""Pattern tagging and lowering of array-level operations to parfors."""
from __future__ import annotations

from dataclasses import replace

from . import ir
from .ir import ArrayType, PatternTag

REDUCE_CALLS = {"sum": "+", "prod": "*", "min": "min", "max": "max"}


class LoweringError(Exception):
    pass


def _is_array(sym, name) -> bool:
    return isinstance(sym.get(name), ArrayType)


def _operands_are_arrays(sym, e) -> bool:
    return isinstance(e, ir.ScalarOp) and any(
        isinstance(a, ir.Var) and _is_array(sym, a.name) for a in e.args)


def classify(sym: dict, s) -> PatternTag | None:
    if isinstance(s, ir.Gemm):
        return PatternTag.GEMM
    if isinstance(s, ir.ForLoop):
        return PatternTag.SERIAL
    if not isinstance(s, ir.Assign):
        return None
    rhs = s.rhs
    if isinstance(rhs, ir.Comprehension):
        return PatternTag.CARTESIAN_MAP
    if s.lhs is not None and _is_array(sym, s.lhs) and _operands_are_arrays(sym, rhs):
        return PatternTag.MAP
    if isinstance(rhs, ir.KnownCall) and rhs.name in REDUCE_CALLS and len(rhs.args) == 1 \
            and isinstance(rhs.args[0], ir.Var) and _is_array(sym, rhs.args[0].name):
        return PatternTag.REDUCE
    return None


def tag_patterns(f: ir.FunctionIR) -> ir.FunctionIR:
    def visit(body):
        out = []
        for s in body:
            if isinstance(s, ir.ForLoop):
                s = replace(s, body=visit(s.body))
            tag = classify(f.symbols, s)
            if tag is not None:
                s = replace(s, tag=tag)
            out.append(s)
        return tuple(out)
    return f.with_body(visit(f.body))


class _ParforLowerer:
    def __init__(self, f: ir.FunctionIR):
        self.f = f
        self.sym = dict(f.symbols)
        self.next_id = 1
        self.counter = 0

    def fresh_index(self) -> str:
        self.counter += 1
        name = f"$p{self.counter}"
        self.sym[name] = ir.ScalarType("i64")
        return name

    def new_id(self) -> int:
        pid = self.next_id
        self.next_id += 1
        return pid

    def nests_for(self, t: ArrayType):
        return tuple(ir.LoopNest(self.fresh_index(), ir.Const(1), ir.extent_expr(d)) for d in t.dims)

    def array_type(self, name, s) -> ArrayType:
        t = self.sym.get(name)
        if not isinstance(t, ArrayType):
            raise LoweringError(f"line {s.span.line}: shape of {name} is unknown")
        return t

    def body(self, stmts):
        out = []
        for s in stmts:
            out.extend(self.stmt(s))
        return tuple(out)

    def stmt(self, s):
        tag = getattr(s, "tag", None)
        if isinstance(s, ir.ForLoop):
            return [replace(s, body=self.body(s.body))]
        if tag is PatternTag.MAP:
            return self.map(s)
        if tag is PatternTag.REDUCE:
            return self.reduce(s)
        if tag is PatternTag.CARTESIAN_MAP:
            return self.cartesian(s)
        return [s]

    def map(self, s):
        t = self.array_type(s.lhs, s)
        nests = self.nests_for(t)
        idx = tuple(ir.Var(n.var) for n in nests)

        def elem(e):
            if isinstance(e, ir.Var) and _is_array(self.sym, e.name):
                return ir.ArrayRead(e.name, idx, e.span)
            return e
        value = replace(s.rhs, args=tuple(elem(a) for a in s.rhs.args))
        return [ir.Alloc(s.lhs, t.elem, tuple(ir.extent_expr(d) for d in t.dims), s.span),
                ir.Parfor(self.new_id(), nests, (), (ir.ArrayWrite(s.lhs, idx, value, s.span),), s.span)]

    def reduce(self, s):
        arr = s.rhs.args[0].name
        combine = s.rhs.name
        t = self.array_type(arr, s)
        nests = self.nests_for(t)
        idx = tuple(ir.Var(n.var) for n in nests)
        upd = ir.ScalarOp(REDUCE_CALLS[combine], (ir.Var(s.lhs), ir.ArrayRead(arr, idx)), s.span)
        red = ir.Reduction(s.lhs, ir.REDUCTION_COMBINES[combine], combine)
        return [ir.Parfor(self.new_id(), nests, (red,), (ir.Assign(s.lhs, upd, s.span),), s.span)]

    def cartesian(self, s):
        t = self.array_type(s.lhs, s)
        c = s.rhs
        return [ir.Alloc(s.lhs, t.elem, tuple(ir.extent_expr(d) for d in t.dims), s.span),
                ir.Parfor(self.new_id(), c.nests, (), c.body, s.span)]


def lower_to_parfors(f: ir.FunctionIR) -> ir.FunctionIR:
    """Replace MAP, REDUCE and CARTESIAN_MAP statements by parfors."""
    lw = _ParforLowerer(f)
    body = lw.body(f.body)
    return f.with_body(body, lw.sym)


def count_tags(f: ir.FunctionIR) -> dict:
    counts = {}
    for s in ir.walk(f.body):
        tag = getattr(s, "tag", None)
        if tag is not None:
            counts[tag] = counts.get(tag, 0) + 1
    return counts

"""Compile a FunctionIR into Python source.

The generated function takes the runtime context ``rt`` followed by the
program parameters and returns a tuple of results. Sequential and SPMD runs
execute the very same code; only the context differs. Every emitted line is
recorded in a line table so runtime errors can point back at the source.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .. import ir
from ..ir import ArrayType
from . import arrays

_BINARY = {"+": "+", "-": "-", "*": "*", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
           "==": "==", "!=": "!="}
_HELPERS = {"exp": "_exp", "log": "_log", "sqrt": "_sqrt", "sin": "_sin", "cos": "_cos",
            "abs": "abs", "min": "min", "max": "max"}

RUNTIME_GLOBALS = {
    "_Array": arrays.Array, "_alloc": arrays.alloc, "_rd1": arrays.rd1, "_rd2": arrays.rd2,
    "_wr1": arrays.wr1, "_wr2": arrays.wr2, "_div": arrays.div, "_pow": arrays.power,
    "_exp": arrays.exp, "_log": arrays.log, "_sqrt": arrays.sqrt, "_sin": arrays.sin,
    "_cos": arrays.cos, "_gemm": arrays.gemm, "_reshape": arrays.reshape,
    "_vector": arrays.vector, "_fold": arrays.fold, "_check": arrays.check_same_dims,
    "_INF": math.inf, "_NAN": math.nan,
}


class CodegenError(Exception):
    pass


@dataclass
class CompiledProgram:
    name: str
    source: str
    params: tuple
    param_kinds: tuple
    line_spans: dict = field(default_factory=dict)

    @property
    def filename(self) -> str:
        return f"<dlg:{self.name}>"

    def load(self):
        code = compile(self.source, self.filename, "exec")
        ns = dict(RUNTIME_GLOBALS)
        exec(code, ns)  # noqa: S102 - the source is generated from checked IR
        return ns["_dlg_main"]


class _Gen:
    def __init__(self, f: ir.FunctionIR):
        self.f = f
        self.sym = f.symbols
        self.lines = []
        self.spans = {}
        self.names = {}
        self.used = set(RUNTIME_GLOBALS) | {"rt", "_dlg_main"}
        self.tmp = 0

    # -- naming
    def py(self, name: str) -> str:
        got = self.names.get(name)
        if got is None:
            base = "v_" + re.sub(r"\W", "_", name)
            got, k = base, 1
            while got in self.used:
                k += 1
                got = f"{base}_{k}"
            self.used.add(got)
            self.names[name] = got
        return got

    def fresh(self, hint="k") -> str:
        self.tmp += 1
        name = f"_{hint}{self.tmp}"
        self.used.add(name)
        return name

    def emit(self, depth: int, text: str, span=ir.NO_SPAN):
        self.lines.append("    " * depth + text)
        if span is not None and span.line:
            self.spans[len(self.lines)] = span

    def is_array(self, name: str) -> bool:
        return isinstance(self.sym.get(name), ArrayType)

    # -- expressions
    def const(self, v) -> str:
        if isinstance(v, bool):
            return "True" if v else "False"
        if isinstance(v, float):
            if math.isnan(v):
                return "_NAN"
            if math.isinf(v):
                return "_INF" if v > 0 else "(-_INF)"
            return repr(v)
        return repr(v)

    def expr(self, e) -> str:
        if isinstance(e, ir.Const):
            return self.const(e.value)
        if isinstance(e, ir.Var):
            return self.py(e.name)
        if isinstance(e, ir.ScalarOp):
            return self.op(e.op, [self.expr(a) for a in e.args], e.args)
        if isinstance(e, ir.ArrayRead):
            idx = ", ".join(self.expr(i) for i in e.index)
            fn = "_rd1" if len(e.index) == 1 else "_rd2"
            return f"{fn}({self.py(e.array)}, {idx})"
        if isinstance(e, ir.KnownCall):
            return self.known_call(e)
        if isinstance(e, ir.UnknownCall):
            args = ", ".join(self.expr(a) for a in e.args)
            return f"rt.extern({e.name!r}, ({args}{',' if len(e.args) == 1 else ''}))"
        raise CodegenError(f"cannot compile expression {type(e).__name__}")

    def op(self, op: str, a: list, exprs) -> str:
        if op in _BINARY:
            return f"({a[0]} {_BINARY[op]} {a[1]})"
        if op == "/":
            d = exprs[1]
            if isinstance(d, ir.Const) and isinstance(d.value, (int, float)) \
                    and not isinstance(d.value, bool) and d.value != 0 and math.isfinite(d.value):
                return f"({a[0]} / {self.const(float(d.value))})"
            return f"_div({a[0]}, {a[1]})"
        if op == "^":
            k = exprs[1]
            if isinstance(k, ir.Const) and k.value == 2 and not isinstance(k.value, bool) \
                    and re.fullmatch(r"[A-Za-z_]\w*", a[0]):
                return f"({a[0]} * {a[0]})"
            return f"_pow({a[0]}, {a[1]})"
        if op == "&&":
            return f"({a[0]} and {a[1]})"
        if op == "||":
            return f"({a[0]} or {a[1]})"
        if op == "not":
            return f"(not {a[0]})"
        if op == "neg":
            return f"(-{a[0]})"
        if op == "select":
            return f"({a[1]} if {a[0]} else {a[2]})"
        if op in _HELPERS:
            return f"{_HELPERS[op]}({', '.join(a)})"
        raise CodegenError(f"unknown scalar op {op}")

    def known_call(self, e: ir.KnownCall) -> str:
        a = [self.expr(x) for x in e.args]
        n = e.name
        if n == "reshape":
            return f"_reshape({', '.join(a)})"
        if n in ("zeros", "ones"):
            return f"_Array.filled('f64', ({', '.join(a)},), {0.0 if n == 'zeros' else 1.0})"
        if n in ("rand", "randn"):
            normal = ", normal=True" if n == "randn" else ""
            return f"rt.rand({', '.join(a)}{normal})"
        if n in ("rand_block", "randn_block"):
            normal = ", normal=True" if n == "randn_block" else ""
            return f"rt.rand({a[0]}, {', '.join(a[2:])}, start={a[1]}{normal})"
        if n == "vector":
            return f"_vector({', '.join(a)})"
        if n in ("sum", "prod", "min", "max") and len(a) == 1:
            return f"_fold({n!r}, {a[0]})"
        if n == "datasize":
            return f"rt.datasize({', '.join(a)})"
        if n in ("block_start", "block_size"):
            return f"rt.{n}({a[0]})"
        raise CodegenError(f"no runtime implementation for call {n}")

    # -- statements
    def body(self, stmts, depth: int):
        start = len(self.lines)
        for s in stmts:
            self.stmt(s, depth)
        if len(self.lines) == start:
            self.emit(depth, "pass")

    def nests(self, nests, depth: int, span) -> int:
        for n in reversed(nests):
            self.emit(depth, f"for {self.py(n.var)} in range({self.expr(n.lower)}, "
                             f"{self.expr(n.upper)} + 1):", span)
            depth += 1
        return depth

    def stmt(self, s, d: int):
        sp = s.span
        if isinstance(s, ir.Assign):
            self.assign(s, d)
        elif isinstance(s, ir.ArrayWrite):
            idx = ", ".join(self.expr(i) for i in s.index)
            fn = "_wr1" if len(s.index) == 1 else "_wr2"
            self.emit(d, f"{fn}({self.py(s.array)}, {idx}, {self.expr(s.value)})", sp)
        elif isinstance(s, (ir.Alloc, ir.LocalAlloc)):
            dims = ", ".join(self.expr(x) for x in s.dims)
            self.emit(d, f"{self.py(s.array)} = _alloc({s.elem!r}, {dims})", sp)
        elif isinstance(s, ir.DataSource):
            self.emit(d, f"rt.read_full({self.py(s.array)}, {self.expr(s.file)}, {s.dataset!r})", sp)
        elif isinstance(s, ir.DataSink):
            self.emit(d, f"rt.write_full({self.py(s.array)}, {self.expr(s.file)}, {s.dataset!r})", sp)
        elif isinstance(s, ir.Gemm):
            self.emit(d, f"{self.py(s.out)} = _gemm({self.py(s.x)}, {s.x_transposed}, "
                         f"{self.py(s.y)}, {s.y_transposed})", sp)
        elif isinstance(s, ir.ForLoop):
            self.emit(d, f"for {self.py(s.var)} in range({self.expr(s.lower)}, "
                         f"{self.expr(s.upper)} + 1):", sp)
            self.body(s.body, d + 1)
        elif isinstance(s, ir.Parfor):
            for r in s.reductions:
                if not self.is_array(r.var):
                    self.emit(d, f"{self.py(r.var)} = {self.const(r.init)}", sp)
            inner = self.nests(s.loop_nests, d, sp)
            self.body(s.body, inner)
        elif isinstance(s, ir.Return):
            items = "".join(f"{self.py(v)}, " for v in s.vars)
            self.emit(d, f"return ({items})", sp)
        elif isinstance(s, ir.PartitionAnnotation):
            self.emit(d, "pass", sp)
        elif isinstance(s, ir.Allreduce):
            v = self.py(s.var)
            self.emit(d, f"{v} = rt.allreduce({v}, {s.combine!r}, {s.var!r})", sp)
        elif isinstance(s, ir.BlockRead):
            self.emit(d, f"rt.block_read({self.py(s.array)}, {self.expr(s.file)}, {s.dataset!r}, "
                         f"{self.expr(s.start)}, {self.expr(s.size)})", sp)
        elif isinstance(s, ir.BlockWrite):
            self.emit(d, f"rt.block_write({self.py(s.array)}, {self.expr(s.file)}, {s.dataset!r}, "
                         f"{self.expr(s.start)}, {self.expr(s.size)}, {self.expr(s.total)})", sp)
        elif isinstance(s, ir.Checkpoint):
            vals = ", ".join(self.py(v) for v in s.vars)
            self.emit(d, f"rt.checkpoint({self.py(s.index_var)}, {tuple(s.vars)!r}, [{vals}])", sp)
        elif isinstance(s, ir.CheckpointCleanup):
            self.emit(d, "rt.checkpoint_cleanup()", sp)
        elif isinstance(s, ir.Restore):
            r = self.fresh("restored")
            self.emit(d, f"{r} = rt.restore({tuple(s.vars)!r})", sp)
            self.emit(d, f"if {r} is None:", sp)
            self.emit(d + 1, f"{self.py(s.start_var)} = {self.expr(s.default_start)}", sp)
            self.emit(d, "else:", sp)
            self.emit(d + 1, f"{self.py(s.start_var)} = {r}[0] + 1", sp)
            if s.vars:
                targets = "".join(f"{self.py(v)}, " for v in s.vars)
                self.emit(d + 1, f"({targets}) = {r}[1]", sp)
        elif isinstance(s, ir.CoherenceCheck):
            vals = ", ".join(self.py(v) for v in s.vars)
            self.emit(d, f"rt.coherence({tuple(s.vars)!r}, [{vals}])", sp)
        else:
            raise CodegenError(f"cannot compile statement {type(s).__name__}")

    def assign(self, s: ir.Assign, d: int):
        sp, rhs = s.span, s.rhs
        if s.lhs is None:
            self.emit(d, self.expr(rhs), sp)
            return
        lhs = self.py(s.lhs)
        t = self.sym.get(s.lhs)
        if isinstance(rhs, ir.Comprehension):
            dims = ", ".join(self.expr(ir.extent_expr(x)) for x in t.dims)
            self.emit(d, f"{lhs} = _alloc({t.elem!r}, {dims})", sp)
            inner = self.nests(rhs.nests, d, sp)
            self.body(rhs.body, inner)
            return
        if isinstance(t, ArrayType) and isinstance(rhs, ir.ScalarOp):
            self.elementwise(lhs, t, rhs, d)
            return
        self.emit(d, f"{lhs} = {self.expr(rhs)}", sp)

    def elementwise(self, lhs: str, t: ArrayType, e: ir.ScalarOp, d: int):
        """Whole-array map, as it appears before parfor lowering."""
        sp = e.span
        arrs, srcs, zips = [], [], []
        for a in e.args:
            if isinstance(a, ir.Var) and self.is_array(a.name):
                x = self.fresh("x")
                arrs.append(self.py(a.name))
                zips.append(x)
                srcs.append(x)
            elif isinstance(a, (ir.Const, ir.Var)):
                srcs.append(self.expr(a))
            else:
                k = self.fresh("k")
                self.emit(d, f"{k} = {self.expr(a)}", sp)
                srcs.append(k)
        if not arrs:
            raise CodegenError(f"array assignment to {lhs} without array operands")
        if len(arrs) > 1:
            self.emit(d, f"_check(({', '.join(arrs)},))", sp)
        body = self.op(e.op, srcs, e.args)
        if len(arrs) == 1:
            loop = f"for {zips[0]} in {arrs[0]}.data"
        else:
            loop = f"for {', '.join(zips)} in zip({', '.join(a + '.data' for a in arrs)})"
        self.emit(d, f"{lhs} = _Array({t.elem!r}, {arrs[0]}.dims, [{body} {loop}])", sp)

    def function(self) -> CompiledProgram:
        params = ", ".join(self.py(p) for p in self.f.params)
        self.emit(0, f"def _dlg_main(rt{', ' if params else ''}{params}):", self.f.span)
        self.body(self.f.body, 1)
        kinds = tuple(getattr(self.sym.get(p), "kind", "f64") for p in self.f.params)
        return CompiledProgram(self.f.name, "\n".join(self.lines) + "\n", tuple(self.f.params),
                               kinds, dict(self.spans))


def generate(f: ir.FunctionIR) -> CompiledProgram:
    return _Gen(f).function()

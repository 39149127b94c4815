"""AST to typed IR: shape inference, desugaring and flattening.

Array-valued operations at statement level are flattened so that each one
becomes its own statement writing a fresh array (a map, a reduction, a
comprehension, a GEMM or a known call). Comprehension bodies are compiled
to scalar code; vector-valued subexpressions inside them (slices, masks,
whole 1D arrays) turn into serial loops.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .. import ir
from ..ir import ArrayType, ScalarType, Span
from . import ast as A


class DlgTypeError(Exception):
    def __init__(self, message: str, span: Span = ir.NO_SPAN, path: str = "<input>"):
        self.message = message
        self.span = span
        self.path = path
        super().__init__(f"{path}:{span.line}:{span.col}: {message}")


ELEM_ALIASES = {"f64": "f64", "Float64": "f64", "i64": "i64", "Int64": "i64", "Int": "i64",
                "bool": "bool", "Bool": "bool"}
_ELEMENTWISE = {"+": "+", "-": "-", ".+": "+", ".-": "-", ".*": "*", "./": "/", ".^": "^",
                "==": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
                ".==": "==", ".!=": "!=", ".<": "<", ".<=": "<=", ".>": ">", ".>=": ">=",
                "&&": "&&", "||": "||"}
_COMPARE = {"==", "!=", "<", "<=", ">", ">=", "&&", "||"}
REDUCE_FUNCS = {"sum": "sum", "prod": "prod", "minimum": "min", "maximum": "max"}
_COMBINE_OP = {"sum": "+", "prod": "*", "min": "min", "max": "max"}
CREATE_FUNCS = ("rand", "randn", "zeros", "ones")


@dataclass
class Val:
    kind: str  # scalar | array | tuple | str | none
    expr: object = None  # ir expression for scalars/strings
    name: str | None = None  # array name
    type: object = None
    items: tuple = ()


@dataclass
class Vec:
    """A vector-valued expression inside a comprehension body."""

    extent: object
    elem: Callable  # index expr -> scalar expr
    guard: Callable | None = None
    kind: str = "f64"


class Lowerer:
    def __init__(self, fn: A.Function, path: str = "<input>"):
        self.fn = fn
        self.path = path
        self.sym: dict = {}
        self.names: dict = {}  # surface name -> current IR name
        self.alias: dict = {}  # scalar name -> canonical extent
        self.externs = set(fn.externs)
        self.counter = 0
        self.rand_site = 0
        self.blocks: list = [[]]
        self.versions: dict = {}

    # -- helpers
    def err(self, msg, node=None):
        span = getattr(node, "span", ir.NO_SPAN) if node is not None else ir.NO_SPAN
        raise DlgTypeError(msg, span, self.path)

    def emit(self, stmt):
        self.blocks[-1].append(stmt)

    def fresh(self, base="t") -> str:
        self.counter += 1
        return f"${base}{self.counter}"

    def fresh_scalar(self, base, kind="f64") -> str:
        n = self.fresh(base)
        self.sym[n] = ScalarType(kind)
        return n

    def canon(self, ext):
        seen = set()
        while isinstance(ext, str) and ext in self.alias and ext not in seen:
            seen.add(ext)
            ext = self.alias[ext]
        return ext

    def unify(self, a, b) -> bool:
        """Equate two extents. Sizes read from data files are only known at
        run time, so a file-derived extent may be identified with another one
        (the runtime checks the actual shapes)."""
        a, b = self.canon(a), self.canon(b)
        if a == b:
            return True
        if isinstance(b, str) and _is_file_extent(b):
            keep, drop = a, b
        elif isinstance(a, str) and _is_file_extent(a):
            keep, drop = b, a
        else:
            return False
        self.alias[drop] = keep
        for name, t in list(self.sym.items()):
            if isinstance(t, ArrayType) and drop in t.dims:
                self.sym[name] = ArrayType(t.elem, tuple(keep if d == drop else d for d in t.dims))
        return True

    def lookup(self, name, node):
        if name in self.names:
            return self.names[name]
        self.err(f"unknown identifier {name}", node)

    # -- entry
    def run(self) -> ir.FunctionIR:
        fn = self.fn
        str_params = _string_params(fn)
        params = []
        for p in fn.params:
            kind = ELEM_ALIASES.get(p.type, p.type) if p.type else ("str" if p.name in str_params else "f64")
            if kind not in ir.SCALAR_KINDS:
                self.err(f"unknown parameter type {p.type}", fn)
            self.sym[p.name] = ScalarType(kind)
            self.names[p.name] = p.name
            params.append(p.name)
        returned = False
        for s in fn.body:
            if isinstance(s, A.Return):
                returned = True
            elif returned:
                self.err("statements after return", s)
            self.stmt(s)
        if not returned:
            self.emit(ir.Return((), fn.span))
        return ir.FunctionIR(fn.name, tuple(params), tuple(self.blocks[0]), self.sym, fn.span)

    # -- statements
    def stmt(self, s):
        if isinstance(s, A.Assign):
            self.assign(s)
        elif isinstance(s, A.For):
            self.for_loop(s)
        elif isinstance(s, A.Return):
            self.ret(s)
        elif isinstance(s, A.Partitioned):
            self.emit(ir.PartitionAnnotation(self.names.get(s.name, s.name), "2D", s.span))
        elif isinstance(s, A.ExprStmt):
            self.expr_stmt(s)
        else:
            self.err(f"unsupported statement {type(s).__name__}", s)

    def expr_stmt(self, s):
        e = s.expr
        if isinstance(e, A.Call) and e.func == "DataSink":
            self.datasink(e)
        elif isinstance(e, A.Call) and e.func in self.externs:
            self.emit(ir.Assign(None, self.extern_call(e), e.span))
        else:
            self.err("expression statement has no effect", s)

    def for_loop(self, s):
        lo = self.scalar(s.lo)
        hi = self.scalar(s.hi)
        var = s.var
        if var in self.names and not isinstance(self.sym.get(self.names[var]), ScalarType):
            self.err(f"loop variable {var} shadows an array", s)
        self.sym[var] = ScalarType("i64")
        self.names[var] = var
        self.blocks.append([])
        for b in s.body:
            if isinstance(b, A.Return):
                self.err("return inside loop", b)
            self.stmt(b)
        body = self.blocks.pop()
        self.emit(ir.ForLoop(var, lo, hi, tuple(body), s.span))

    def ret(self, s):
        names = []
        for v in s.values:
            val = self.value(v)
            if val.kind == "array":
                names.append(val.name)
            elif val.kind == "scalar":
                if isinstance(val.expr, ir.Var):
                    names.append(val.expr.name)
                else:
                    t = self.fresh_scalar("r", val.type.kind)
                    self.emit(ir.Assign(t, val.expr, v.span))
                    names.append(t)
            else:
                self.err("cannot return this value", v)
        self.emit(ir.Return(tuple(names), s.span))

    def assign(self, s):
        value = s.value
        if s.op:
            if len(s.targets) != 1:
                self.err("compound assignment needs one target", s)
            value = A.BinOp(s.op, A.Name(s.targets[0], s.span), value, s.span)
        if len(s.targets) > 1:
            val = self.value(value)
            if val.kind != "tuple" or len(val.items) != len(s.targets):
                self.err("tuple assignment needs a matching tuple value", s)
            for t, item in zip(s.targets, val.items):
                self.bind_scalar(t, item, s.span)
            return
        target = s.targets[0]
        val = self.value(value, dest=target)
        if val.kind == "array":
            self.bind_array(target, val, s.span)
        elif val.kind == "scalar":
            self.bind_scalar(target, val, s.span)
        elif val.kind == "str":
            self.bind_scalar(target, val, s.span)
        else:
            self.err("right-hand side has no value", s)

    def bind_scalar(self, target, val, span):
        cur = self.names.get(target)
        if cur is not None and isinstance(self.sym.get(cur), ArrayType):
            name = self._version(target)
        else:
            name = target
        kind = val.type.kind if val.type is not None else "f64"
        if name in self.sym and isinstance(self.sym[name], ScalarType):
            if self.sym[name].kind != kind and "str" in (kind, self.sym[name].kind):
                self.err(f"cannot assign {kind} to {target}", None)
            if self.sym[name].kind == "i64" and kind == "f64":
                self.sym[name] = ScalarType("f64")
        else:
            self.sym[name] = ScalarType(kind)
        self.names[target] = name
        self.emit(ir.Assign(name, val.expr, span))
        ext = ir.expr_extent(val.expr)
        if ext is not None and kind == "i64" and len(self.blocks) == 1:
            self.alias[name] = self.canon(ext)
        else:
            self.alias.pop(name, None)

    def bind_array(self, target, val, span):
        if val.name == self._pending_dest:
            self.names[target] = val.name
            return
        cur = self.names.get(target)
        if cur is not None and self.sym.get(cur) == val.type:
            self.emit(ir.Assign(cur, ir.Var(val.name, span), span))
            return
        name = target if cur is None else self._version(target)
        self.sym[name] = val.type
        self.names[target] = name
        self.emit(ir.Assign(name, ir.Var(val.name, span), span))

    def _version(self, target):
        k = self.versions.get(target, 1) + 1
        self.versions[target] = k
        return f"{target}.{k}"

    # destination naming: a freshly created array takes the target's name when
    # that name is unused; otherwise a temp is created and then bound.
    _pending_dest = None

    def out_name(self, dest, typ):
        if dest is not None and dest not in self.names and dest not in self.sym:
            self._pending_dest = dest
            self.sym[dest] = typ
            return dest
        n = self.fresh()
        self.sym[n] = typ
        return n

    # -- expressions (statement level)
    def scalar(self, e):
        v = self.value(e)
        if v.kind != "scalar":
            self.err("expected a scalar expression", e)
        return v.expr

    def value(self, e, dest=None) -> Val:
        self._pending_dest = None
        v = self._value(e, dest)
        return v

    def _value(self, e, dest=None) -> Val:
        if isinstance(e, A.Num):
            kind = "i64" if isinstance(e.value, int) else "f64"
            return Val("scalar", ir.Const(e.value, e.span), type=ScalarType(kind))
        if isinstance(e, A.Str):
            return Val("str", ir.Const(e.value, e.span), type=ScalarType("str"))
        if isinstance(e, A.Name):
            name = self.lookup(e.id, e)
            t = self.sym[name]
            if isinstance(t, ArrayType):
                return Val("array", name=name, type=t)
            if t.kind == "str":
                return Val("str", ir.Var(name, e.span), type=t)
            return Val("scalar", ir.Var(name, e.span), type=t)
        if isinstance(e, A.BinOp):
            return self.binop(e, dest)
        if isinstance(e, A.Unary):
            v = self._value(e.operand)
            op = "neg" if e.op == "-" else "not"
            if v.kind == "scalar":
                if op == "neg" and isinstance(v.expr, ir.Const) and not isinstance(v.expr.value, (bool, str)):
                    return Val("scalar", ir.Const(-v.expr.value, e.span), type=v.type)
                kind = v.type.kind if op == "neg" else "bool"
                return Val("scalar", ir.ScalarOp(op, (v.expr,), e.span), type=ScalarType(kind))
            if v.kind == "array":
                return self.emit_map(op, [v], e, dest)
            self.err("bad operand for unary operator", e)
        if isinstance(e, A.Call):
            return self.call(e, dest)
        if isinstance(e, A.Index):
            return self.index(e)
        if isinstance(e, A.Comprehension):
            return self.comprehension(e, dest)
        if isinstance(e, A.ArrayLit):
            items = []
            for it in e.items:
                v = self._value(it)
                if v.kind != "scalar" or not isinstance(v.expr, ir.Const):
                    self.err("array literal items must be numeric constants", it)
                items.append(ir.Const(float(v.expr.value)))
            t = ArrayType("f64", (len(items),))
            out = self.out_name(dest, t)
            self.emit(ir.Assign(out, ir.KnownCall("vector", tuple(items), e.span), e.span))
            return Val("array", name=out, type=t)
        if isinstance(e, A.Transpose):
            self.err("transpose is only supported as a matrix multiply operand", e)
        if isinstance(e, A.TypeRef):
            self.err("type used as a value", e)
        from .parser import _Tuple
        if isinstance(e, _Tuple):
            return Val("tuple", items=tuple(self._value(x) for x in e.items))
        self.err(f"unsupported expression {type(e).__name__}", e)

    def binop(self, e, dest):
        if e.op == "*":
            lv = self._operand_for_gemm(e.left)
            rv = self._operand_for_gemm(e.right)
            if lv[0].kind == "array" and rv[0].kind == "array":
                return self.emit_gemm(lv, rv, e, dest)
            if lv[1] or rv[1]:
                self.err("transpose is only supported as a matrix multiply operand", e)
            return self._elementwise("*", lv[0], rv[0], e, dest)
        lv = self._value(e.left)
        rv = self._value(e.right)
        if e.op in ("^", "/") and rv.kind == "array":
            self.err(f"use .{e.op} for elementwise operations on arrays", e)
        if e.op == "^" and lv.kind == "array":
            self.err("use .^ for elementwise power on arrays", e)
        op = _ELEMENTWISE.get(e.op, e.op)
        return self._elementwise(op, lv, rv, e, dest)

    def _operand_for_gemm(self, e):
        if isinstance(e, A.Transpose):
            v = self._value(e.operand)
            if v.kind != "array":
                self.err("transpose of a scalar", e)
            return v, True
        return self._value(e), False

    def _elementwise(self, op, lv, rv, e, dest):
        for v in (lv, rv):
            if v.kind not in ("scalar", "array"):
                self.err("bad operand", e)
        if lv.kind == "scalar" and rv.kind == "scalar":
            kind = _result_kind(op, lv.type.kind, rv.type.kind)
            return Val("scalar", ir.ScalarOp(op, (lv.expr, rv.expr), e.span), type=ScalarType(kind))
        return self.emit_map(op, [lv, rv], e, dest)

    def emit_map(self, op, vals, e, dest):
        arrays = [v for v in vals if v.kind == "array"]
        dims = tuple(self.canon(d) for d in arrays[0].type.dims)
        for v in arrays[1:]:
            other = tuple(self.canon(d) for d in v.type.dims)
            if len(other) != len(dims) or not all(self.unify(a, b) for a, b in zip(dims, other)):
                self.err(f"shape mismatch: {list(dims)} vs {list(other)}", e)
        elem = "bool" if op in _COMPARE or op == "not" else "f64"
        t = ArrayType(elem, dims)
        operands = tuple(ir.Var(v.name, e.span) if v.kind == "array" else v.expr for v in vals)
        out = self.out_name(dest, t)
        self.emit(ir.Assign(out, ir.ScalarOp(op, operands, e.span), e.span))
        return Val("array", name=out, type=t)

    def emit_gemm(self, lv, rv, e, dest):
        (xv, xt), (yv, yt) = lv, rv
        xd = [self.canon(d) for d in xv.type.dims]
        yd = [self.canon(d) for d in yv.type.dims]
        if len(xd) != 2 or len(yd) != 2:
            self.err("matrix multiply operands must be matrices (use reshape)", e)
        m, k = (xd[1], xd[0]) if xt else (xd[0], xd[1])
        k2, n = (yd[1], yd[0]) if yt else (yd[0], yd[1])
        if not self.unify(k, k2):
            self.err(f"matrix multiply inner dims {k}≠{k2}", e)
        t = ArrayType("f64", (m, n))
        out = self.out_name(dest, t)
        self.emit(ir.Gemm(out, xv.name, xt, yv.name, yt, e.span))
        return Val("array", name=out, type=t)

    def extent_of(self, e):
        """Static extent (int or canonical symbol) of a scalar expression."""
        v = self._value(e)
        if v.kind != "scalar":
            self.err("array extent must be a scalar", e)
        ext = ir.expr_extent(v.expr)
        if ext is None:
            self.err("array extents must be integer constants or variables", e)
        return self.canon(ext)

    def dims_args(self, args, e):
        if len(args) == 1 and isinstance(args[0], A.Call) and args[0].func == "size" \
                and len(args[0].args) == 1:
            v = self._value(args[0].args[0])
            if v.kind != "array":
                self.err("size() of a non-array", e)
            return tuple(self.canon(d) for d in v.type.dims)
        dims = tuple(self.extent_of(a) for a in args)
        if len(dims) not in (1, 2):
            self.err("only 1D and 2D arrays are supported", e)
        return dims

    def call(self, e, dest):
        f = e.func
        args = e.args
        if f in ir.UNARY_FUNCS:
            if len(args) != 1:
                self.err(f"{f} takes one argument", e)
            v = self._value(args[0])
            if v.kind == "scalar":
                return Val("scalar", ir.ScalarOp(f, (v.expr,), e.span), type=ScalarType("f64"))
            if v.kind == "array":
                return self.emit_map(f, [v], e, dest)
            self.err(f"bad argument to {f}", e)
        if f in ("min", "max") and len(args) == 2:
            a, b = self._value(args[0]), self._value(args[1])
            if a.kind == "scalar" and b.kind == "scalar":
                kind = _result_kind("+", a.type.kind, b.type.kind)
                return Val("scalar", ir.ScalarOp(f, (a.expr, b.expr), e.span), type=ScalarType(kind))
            return self.emit_map(f, [a, b], e, dest)
        if f in CREATE_FUNCS:
            dims = self.dims_args(args, e)
            t = ArrayType("f64", dims)
            out = self.out_name(dest, t)
            cargs = tuple(ir.extent_expr(d, e.span) for d in dims)
            if f in ("rand", "randn"):
                self.rand_site += 1
                cargs = (ir.Const(self.rand_site),) + cargs
            self.emit(ir.Assign(out, ir.KnownCall(f, cargs, e.span), e.span))
            return Val("array", name=out, type=t)
        if f == "size":
            v = self._value(args[0]) if args else None
            if v is None or v.kind != "array":
                self.err("size() needs an array argument", e)
            exts = [self.canon(d) for d in v.type.dims]
            if len(args) == 2:
                k = self._value(args[1])
                if not isinstance(k.expr, ir.Const) or not 1 <= k.expr.value <= len(exts):
                    self.err("size() dimension must be a constant within the array rank", e)
                ext = exts[k.expr.value - 1]
                return Val("scalar", ir.extent_expr(ext, e.span), type=ScalarType("i64"))
            return Val("tuple", items=tuple(Val("scalar", ir.extent_expr(x, e.span),
                                                type=ScalarType("i64")) for x in exts))
        if f == "length":
            v = self._value(args[0]) if len(args) == 1 else None
            if v is None or v.kind != "array":
                self.err("length() needs an array argument", e)
            exts = [self.canon(d) for d in v.type.dims]
            ex = ir.extent_expr(exts[0], e.span)
            for x in exts[1:]:
                ex = ir.ScalarOp("*", (ex, ir.extent_expr(x, e.span)), e.span)
            if len(exts) == 2 and all(isinstance(x, int) for x in exts):
                ex = ir.Const(exts[0] * exts[1], e.span)
            return Val("scalar", ex, type=ScalarType("i64"))
        if f == "reshape":
            if len(args) < 2:
                self.err("reshape(A, dims...) needs dimensions", e)
            v = self._value(args[0])
            if v.kind != "array":
                self.err("reshape of a non-array", e)
            dims = self.dims_args(args[1:], e)
            t = ArrayType(v.type.elem, dims)
            out = self.out_name(dest, t)
            self.emit(ir.Assign(out, ir.KnownCall(
                "reshape", (ir.Var(v.name, e.span),) + tuple(ir.extent_expr(d) for d in dims),
                e.span), e.span))
            return Val("array", name=out, type=t)
        if f in REDUCE_FUNCS:
            if len(args) != 1:
                self.err(f"{f} takes one argument", e)
            v = self._value(args[0])
            if v.kind != "array":
                self.err(f"{f} of a non-array", e)
            out = self.fresh_scalar("s", "f64")
            self.emit(ir.Assign(out, ir.KnownCall(REDUCE_FUNCS[f], (ir.Var(v.name, e.span),), e.span),
                                e.span))
            return Val("scalar", ir.Var(out, e.span), type=ScalarType("f64"))
        if f == "DataSource":
            return self.datasource(e, dest)
        if f == "DataSink":
            self.err("DataSink has no value", e)
        if f in self.externs:
            t = self.fresh_scalar("x", "f64")
            self.emit(ir.Assign(t, self.extern_call(e), e.span))
            return Val("scalar", ir.Var(t, e.span), type=ScalarType("f64"))
        if f == "indmin":
            self.err("indmin is only supported inside comprehensions", e)
        self.err(f"unknown function {f}", e)

    def extern_call(self, e):
        args = []
        for a in e.args:
            v = self._value(a)
            args.append(ir.Var(v.name, a.span) if v.kind == "array" else v.expr)
        return ir.UnknownCall(e.func, tuple(args), e.span)

    def datasource(self, e, dest):
        if len(e.args) not in (3, 4):
            self.err("DataSource(Type, \"dataset\", file)", e)
        args = list(e.args)
        if len(args) == 4:  # DataSource(T, HDF5, "name", file)
            args.pop(1)
        tref, ds, file = args
        if not isinstance(tref, A.TypeRef) or tref.name not in ("Matrix", "Vector") \
                or len(tref.params) != 1 or tref.params[0] not in ELEM_ALIASES:
            self.err("DataSource type must be Matrix{T} or Vector{T}", e)
        if not isinstance(ds, A.Str):
            self.err("DataSource dataset name must be a string", e)
        fv = self._value(file)
        if fv.kind != "str":
            self.err("DataSource file must be a string", e)
        nd = 2 if tref.name == "Matrix" else 1
        if dest is None or dest in self.names:
            base = self.fresh("ds")
        else:
            base = dest
        dims = []
        for k in range(1, nd + 1):
            dn = f"{base}.d{k}"
            self.sym[dn] = ScalarType("i64")
            self.emit(ir.Assign(dn, ir.KnownCall(
                "datasize", (fv.expr, ir.Const(ds.value), ir.Const(k), ir.Const(nd)), e.span), e.span))
            dims.append(dn)
        t = ArrayType(ELEM_ALIASES[tref.params[0]], tuple(dims))
        if base == dest:
            self._pending_dest = dest
        self.sym[base] = t
        self.emit(ir.Alloc(base, t.elem, tuple(ir.Var(d) for d in dims), e.span))
        self.emit(ir.DataSource(base, ds.value, fv.expr, e.span))
        return Val("array", name=base, type=t)

    def datasink(self, e):
        if len(e.args) not in (3, 4):
            self.err("DataSink(A, \"dataset\", file)", e)
        args = list(e.args)
        if len(args) == 4:
            args.pop(1)
        a, ds, file = args
        v = self._value(a)
        if v.kind != "array":
            self.err("DataSink of a non-array", e)
        if not isinstance(ds, A.Str):
            self.err("DataSink dataset name must be a string", e)
        fv = self._value(file)
        if fv.kind != "str":
            self.err("DataSink file must be a string", e)
        self.emit(ir.DataSink(v.name, ds.value, fv.expr, e.span))

    def index(self, e):
        v = self._value(e.target)
        if v.kind != "array":
            self.err("indexing a non-array", e)
        if len(e.indices) != v.type.ndims:
            self.err(f"{v.name} has {v.type.ndims} dimension(s), indexed with {len(e.indices)}", e)
        idx = []
        for i in e.indices:
            if isinstance(i, A.Colon):
                self.err("slices are only supported inside comprehensions", e)
            idx.append(self.scalar(i))
        return Val("scalar", ir.ArrayRead(v.name, tuple(idx), e.span),
                   type=ScalarType("f64" if v.type.elem == "bool" else v.type.elem))

    # -- comprehensions
    def comprehension(self, e, dest):
        gens = list(e.gens)
        elt = e.elt
        inner = []
        if isinstance(elt, A.Comprehension):
            inner = list(elt.gens)
            elt = elt.elt
            if isinstance(elt, A.Comprehension):
                self.err("comprehensions nest at most two levels", e)
        if len(gens) + len(inner) > 2:
            self.err("comprehensions produce at most 2D arrays", e)
        env = {}
        outer_nests, inner_nests = [], []
        for group, nests in ((gens, outer_nests), (inner, inner_nests)):
            for g in group:
                if not (isinstance(g.lo, A.Num) and g.lo.value == 1):
                    self.err("comprehension ranges must start at 1", e)
                ext = self.extent_of(g.hi)
                var = self.fresh(g.var)
                self.sym[var] = ScalarType("i64")
                env[g.var] = var
                nests.append(ir.LoopNest(var, ir.Const(1), ir.extent_expr(ext)))
        # dims: inner comprehension first (innermost), then generators in source order
        all_nests = inner_nests + outer_nests
        dims = tuple(ir.expr_extent(n.upper) for n in all_nests)
        self.blocks.append([])
        target_blocks = self.blocks[-1]
        for n in inner_nests:
            self.blocks.append([])
        val = self.sc(elt, env)
        if isinstance(val, Vec):
            self.err("comprehension element must be a scalar", elt)
        elem_kind = "i64" if self._last_kind == "i64" else "f64"
        t = ArrayType(elem_kind, dims)
        out = self.out_name(dest, t)
        self.emit(ir.ArrayWrite(out, tuple(ir.Var(n.var) for n in all_nests), val, e.span))
        for n in reversed(inner_nests):
            body = self.blocks.pop()
            self.emit(ir.ForLoop(n.var, n.lower, n.upper, tuple(body), e.span))
        assert self.blocks[-1] is target_blocks
        body = self.blocks.pop()
        pending = self._pending_dest
        self.emit(ir.Assign(out, ir.Comprehension(tuple(outer_nests), tuple(body), e.span), e.span))
        self._pending_dest = pending
        return Val("array", name=out, type=t)

    _last_kind = "f64"

    def sc(self, e, env):
        """Compile ``e`` in scalar context; returns an ir expr or a Vec."""
        self._last_kind = "f64"
        if isinstance(e, A.Num):
            if isinstance(e.value, int):
                self._last_kind = "i64"
            return ir.Const(e.value, e.span)
        if isinstance(e, A.Name):
            if e.id in env:
                self._last_kind = "i64"
                return ir.Var(env[e.id], e.span)
            name = self.lookup(e.id, e)
            t = self.sym[name]
            if isinstance(t, ArrayType):
                if t.ndims != 1:
                    self.err(f"matrix {e.id} used as a vector; slice it", e)
                return Vec(self.canon(t.dims[0]),
                           lambda k, name=name, sp=e.span: ir.ArrayRead(name, (k,), sp),
                           kind=t.elem)
            if t.kind == "i64":
                self._last_kind = "i64"
            return ir.Var(name, e.span)
        if isinstance(e, A.BinOp):
            if e.op in _ELEMENTWISE or e.op in ("*", "/", "^"):
                a = self.sc(e.left, env)
                ka = self._last_kind
                b = self.sc(e.right, env)
                kb = self._last_kind
                op = _ELEMENTWISE.get(e.op, e.op)
                if e.op == "*" and isinstance(a, Vec) and isinstance(b, Vec):
                    self.err("use .* for elementwise vector products", e)
                r = self._combine(op, a, b, e)
                self._last_kind = _result_kind(op, ka, kb)
                return r
            self.err(f"unsupported operator {e.op}", e)
        if isinstance(e, A.Unary):
            a = self.sc(e.operand, env)
            op = "neg" if e.op == "-" else "not"
            if isinstance(a, ir.Const) and op == "neg" and not isinstance(a.value, (bool, str)):
                return ir.Const(-a.value, e.span)
            return self._map1(op, a, e)
        if isinstance(e, A.Index):
            return self.sc_index(e, env)
        if isinstance(e, A.Call):
            return self.sc_call(e, env)
        self.err(f"unsupported expression in comprehension: {type(e).__name__}", e)

    def _map1(self, op, a, e):
        if isinstance(a, Vec):
            return Vec(a.extent, lambda k: ir.ScalarOp(op, (a.elem(k),), e.span), a.guard)
        return ir.ScalarOp(op, (a,), e.span)

    def _combine(self, op, a, b, e):
        if isinstance(a, Vec) or isinstance(b, Vec):
            if isinstance(a, Vec) and isinstance(b, Vec) and a.extent != b.extent:
                self.err(f"vector length mismatch: {a.extent} vs {b.extent}", e)
            ext = a.extent if isinstance(a, Vec) else b.extent
            fa = a.elem if isinstance(a, Vec) else (lambda k: a)
            fb = b.elem if isinstance(b, Vec) else (lambda k: b)
            guards = [v.guard for v in (a, b) if isinstance(v, Vec) and v.guard]
            guard = None
            if len(guards) == 1:
                guard = guards[0]
            elif len(guards) == 2:
                g1, g2 = guards
                guard = lambda k: ir.ScalarOp("&&", (g1(k), g2(k)))  # noqa: E731
            kind = "bool" if op in _COMPARE else "f64"
            return Vec(ext, lambda k: ir.ScalarOp(op, (fa(k), fb(k)), e.span), guard, kind)
        return ir.ScalarOp(op, (a, b), e.span)

    def sc_index(self, e, env):
        if not isinstance(e.target, A.Name):
            self.err("only named arrays can be indexed", e)
        name = self.lookup(e.target.id, e)
        t = self.sym[name]
        if not isinstance(t, ArrayType):
            self.err("indexing a non-array", e)
        if len(e.indices) != t.ndims:
            self.err(f"{e.target.id} has {t.ndims} dimension(s), indexed with {len(e.indices)}", e)
        parts = []
        vec_pos = None
        vec = None
        for p, i in enumerate(e.indices):
            if isinstance(i, A.Colon):
                parts.append(None)
                if vec_pos is not None:
                    self.err("at most one slice or mask per index", e)
                vec_pos = p
                vec = Vec(self.canon(t.dims[p]), lambda k: k)
            else:
                x = self.sc(i, env)
                if isinstance(x, Vec):
                    if vec_pos is not None:
                        self.err("at most one slice or mask per index", e)
                    if x.kind != "bool":
                        self.err("vector indices must be boolean masks", i)
                    if x.extent != self.canon(t.dims[p]):
                        self.err(f"mask length {x.extent} does not match dimension {t.dims[p]}", i)
                    vec_pos = p
                    mask = x
                    vec = Vec(x.extent, lambda k: k,
                              guard=(lambda k, m=mask: _and(m.guard, m.elem, k)))
                    parts.append(None)
                else:
                    parts.append(x)
        if vec_pos is None:
            return ir.ArrayRead(name, tuple(parts), e.span)

        def elem(k, parts=tuple(parts), pos=vec_pos):
            idx = list(parts)
            idx[pos] = k
            return ir.ArrayRead(name, tuple(idx), e.span)
        return Vec(vec.extent, elem, vec.guard, t.elem)

    def sc_call(self, e, env):
        f = e.func
        if f in ir.UNARY_FUNCS and len(e.args) == 1:
            return self._map1(f, self.sc(e.args[0], env), e)
        if f in ("min", "max") and len(e.args) == 2:
            return self._combine(f, self.sc(e.args[0], env), self.sc(e.args[1], env), e)
        if f in REDUCE_FUNCS and len(e.args) == 1:
            v = self.sc(e.args[0], env)
            if not isinstance(v, Vec):
                self.err(f"{f} of a scalar", e)
            combine = REDUCE_FUNCS[f]
            acc = self.fresh_scalar("acc")
            k = self.fresh_scalar("k", "i64")
            self.emit(ir.Assign(acc, ir.Const(ir.REDUCTION_COMBINES[combine]), e.span))
            kv = ir.Var(k)
            upd = ir.ScalarOp(_COMBINE_OP[combine], (ir.Var(acc), v.elem(kv)), e.span)
            if v.guard is not None:
                upd = ir.ScalarOp("select", (v.guard(kv), upd, ir.Var(acc)), e.span)
            self.emit(ir.ForLoop(k, ir.Const(1), ir.extent_expr(v.extent),
                                 (ir.Assign(acc, upd, e.span),), e.span))
            self._last_kind = "f64"
            return ir.Var(acc, e.span)
        if f in ("indmin", "indmax") and len(e.args) == 1:
            v = self.sc(e.args[0], env)
            if not isinstance(v, Vec) or v.guard is not None:
                self.err(f"{f} needs an unmasked vector", e)
            best = self.fresh_scalar("best")
            bi = self.fresh_scalar("arg", "i64")
            k = self.fresh_scalar("k", "i64")
            cur = self.fresh_scalar("v")
            c = self.fresh_scalar("c", "bool")
            cmp = "<" if f == "indmin" else ">"
            self.emit(ir.Assign(best, ir.Const(float("inf") if f == "indmin" else float("-inf"))))
            self.emit(ir.Assign(bi, ir.Const(0)))
            kv = ir.Var(k)
            body = (
                ir.Assign(cur, v.elem(kv), e.span),
                ir.Assign(c, ir.ScalarOp(cmp, (ir.Var(cur), ir.Var(best))), e.span),
                ir.Assign(bi, ir.ScalarOp("select", (ir.Var(c), kv, ir.Var(bi))), e.span),
                ir.Assign(best, ir.ScalarOp("select", (ir.Var(c), ir.Var(cur), ir.Var(best))), e.span),
            )
            self.emit(ir.ForLoop(k, ir.Const(1), ir.extent_expr(v.extent), body, e.span))
            self._last_kind = "i64"
            return ir.Var(bi, e.span)
        if f == "length" and len(e.args) == 1:
            v = self.sc(e.args[0], env)
            if isinstance(v, Vec):
                return ir.extent_expr(v.extent)
        if f == "size" and len(e.args) == 2 and isinstance(e.args[0], A.Name):
            v = self._value(e)
            return v.expr
        self.err(f"unsupported call {f} in comprehension", e)


def _is_file_extent(name: str) -> bool:
    head, _, tail = name.rpartition(".d")
    return bool(head) and tail.isdigit()


def _and(guard, elem, k):
    g = elem(k)
    return ir.ScalarOp("&&", (guard(k), g)) if guard else g


def _result_kind(op, a, b):
    if op in _COMPARE:
        return "bool"
    if op == "/" or op == "^":
        return "f64"
    return "i64" if a == "i64" and b == "i64" else "f64"


def _string_params(fn: A.Function) -> set:
    out = set()

    def visit(x):
        if isinstance(x, A.Call):
            if x.func in ("DataSource", "DataSink") and x.args and isinstance(x.args[-1], A.Name):
                out.add(x.args[-1].id)
            for a in x.args:
                visit(a)
        elif isinstance(x, (A.Assign, A.ExprStmt)):
            visit(x.value if isinstance(x, A.Assign) else x.expr)
        elif isinstance(x, A.For):
            for b in x.body:
                visit(b)
    for s in fn.body:
        visit(s)
    return out


def lower_to_ir(fn: A.Function, path: str = "<input>") -> ir.FunctionIR:
    """Type-check and flatten an AST into FunctionIR."""
    return Lowerer(fn, path).run()

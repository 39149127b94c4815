"""S-expression text form of the IR.

Grammar (one statement per line; compound statements close with ``)`` on
their own line)::

    function  := (function NAME (params NAME*) (symbols SYM*) (body STMT*))
    SYM       := (NAME KIND) | (NAME (array KIND EXT+))
    STMT      := (assign NAME|_ EXPR) | (write NAME (EXPR*) EXPR)
               | (alloc NAME KIND (EXPR*)) | (local-alloc NAME KIND (EXPR*))
               | (datasource NAME STRING EXPR) | (datasink NAME STRING EXPR)
               | (gemm NAME NAME T|N NAME T|N) | (for NAME EXPR EXPR STMT*)
               | (parfor INT (nests (NAME EXPR EXPR)*) (reductions (NAME NUM COMBINE)*) STMT*)
               | (return NAME*) | (partitioned NAME 2D) | (allreduce NAME COMBINE)
               | (block-read NAME STRING EXPR EXPR EXPR)
               | (block-write NAME STRING EXPR EXPR EXPR EXPR)
               | (checkpoint NAME (NAME*)) | (checkpoint-cleanup)
               | (restore NAME (NAME*) NAME EXPR) | (coherence-check (NAME*))
    EXPR      := NUM | STRING | true | false | NAME | (OP EXPR+) | (ref NAME EXPR*)
               | (call NAME EXPR*) | (extern NAME EXPR*)
               | (comprehension (nests (NAME EXPR EXPR)*) STMT*)

Floats always print with a ``.``, exponent, ``inf`` or ``nan``; integers never do.
"""
from __future__ import annotations

import math
import re

from . import ir

_TOKEN = re.compile(r'\s*(?:(\()|(\))|("(?:[^"\\]|\\.)*")|([^\s()"]+))')


class IRSyntaxError(ValueError):
    pass


class _Str(str):
    """Marks a quoted string atom."""


def _tokenize(text):
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise IRSyntaxError(f"bad character at offset {pos}")
        pos = m.end()
        if m.group(1):
            out.append("(")
        elif m.group(2):
            out.append(")")
        elif m.group(3):
            out.append(_Str(bytes(m.group(3)[1:-1], "utf-8").decode("unicode_escape")))
        else:
            out.append(m.group(4))
    return out


def read_sexpr(text):
    toks = _tokenize(text)
    stack = [[]]
    for t in toks:
        if t == "(" and not isinstance(t, _Str):
            stack.append([])
        elif t == ")" and not isinstance(t, _Str):
            if len(stack) == 1:
                raise IRSyntaxError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(t)
    if len(stack) != 1 or len(stack[0]) != 1:
        raise IRSyntaxError("expected exactly one top-level form")
    return stack[0][0]


# -- printing ------------------------------------------------------------------

def _num(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot print constant {v!r}")


def format_expr(e) -> str:
    if isinstance(e, ir.Const):
        return _num(e.value)
    if isinstance(e, ir.Var):
        return e.name
    if isinstance(e, ir.ScalarOp):
        return "(" + " ".join([e.op, *map(format_expr, e.args)]) + ")"
    if isinstance(e, ir.ArrayRead):
        return "(" + " ".join(["ref", e.array, *map(format_expr, e.index)]) + ")"
    if isinstance(e, ir.KnownCall):
        return "(" + " ".join(["call", e.name, *map(format_expr, e.args)]) + ")"
    if isinstance(e, ir.UnknownCall):
        return "(" + " ".join(["extern", e.name, *map(format_expr, e.args)]) + ")"
    if isinstance(e, ir.Comprehension):
        return "(comprehension " + _nests(e.nests) + " ".join(
            [""] + [format_stmt(s, 0).strip() for s in e.body]) + ")"
    raise TypeError(f"not an expression: {e!r}")


def _nests(nests) -> str:
    return "(nests" + "".join(f" ({n.var} {format_expr(n.lower)} {format_expr(n.upper)})"
                              for n in nests) + ")"


def _names(names) -> str:
    return "(" + " ".join(names) + ")"


def format_stmt(s, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(s, ir.Assign):
        if isinstance(s.rhs, ir.Comprehension):
            c = s.rhs
            lines = [f"{pad}(assign {s.lhs} (comprehension {_nests(c.nests)}"]
            lines += [format_stmt(b, indent + 1) for b in c.body]
            lines.append(f"{pad}))")
            return "\n".join(lines)
        return f"{pad}(assign {s.lhs if s.lhs is not None else '_'} {format_expr(s.rhs)})"
    if isinstance(s, ir.ArrayWrite):
        idx = " ".join(map(format_expr, s.index))
        return f"{pad}(write {s.array} ({idx}) {format_expr(s.value)})"
    if isinstance(s, (ir.Alloc, ir.LocalAlloc)):
        head = "alloc" if isinstance(s, ir.Alloc) else "local-alloc"
        return f"{pad}({head} {s.array} {s.elem} ({' '.join(map(format_expr, s.dims))}))"
    if isinstance(s, ir.DataSource):
        return f"{pad}(datasource {s.array} {_num(s.dataset)} {format_expr(s.file)})"
    if isinstance(s, ir.DataSink):
        return f"{pad}(datasink {s.array} {_num(s.dataset)} {format_expr(s.file)})"
    if isinstance(s, ir.Gemm):
        tx = "T" if s.x_transposed else "N"
        ty = "T" if s.y_transposed else "N"
        return f"{pad}(gemm {s.out} {s.x} {tx} {s.y} {ty})"
    if isinstance(s, ir.ForLoop):
        lines = [f"{pad}(for {s.var} {format_expr(s.lower)} {format_expr(s.upper)}"]
        lines += [format_stmt(b, indent + 1) for b in s.body]
        lines.append(f"{pad})")
        return "\n".join(lines)
    if isinstance(s, ir.Parfor):
        reds = "".join(f" ({r.var} {_num(float(r.init))} {r.combine})" for r in s.reductions)
        lines = [f"{pad}(parfor {s.id} {_nests(s.loop_nests)} (reductions{reds})"]
        lines += [format_stmt(b, indent + 1) for b in s.body]
        lines.append(f"{pad})")
        return "\n".join(lines)
    if isinstance(s, ir.Return):
        return f"{pad}(return" + "".join(" " + v for v in s.vars) + ")"
    if isinstance(s, ir.PartitionAnnotation):
        return f"{pad}(partitioned {s.array} {s.kind})"
    if isinstance(s, ir.Allreduce):
        return f"{pad}(allreduce {s.var} {s.combine})"
    if isinstance(s, ir.BlockRead):
        return (f"{pad}(block-read {s.array} {_num(s.dataset)} {format_expr(s.file)} "
                f"{format_expr(s.start)} {format_expr(s.size)})")
    if isinstance(s, ir.BlockWrite):
        return (f"{pad}(block-write {s.array} {_num(s.dataset)} {format_expr(s.file)} "
                f"{format_expr(s.start)} {format_expr(s.size)} {format_expr(s.total)})")
    if isinstance(s, ir.Checkpoint):
        return f"{pad}(checkpoint {s.index_var} {_names(s.vars)})"
    if isinstance(s, ir.CheckpointCleanup):
        return f"{pad}(checkpoint-cleanup)"
    if isinstance(s, ir.Restore):
        return (f"{pad}(restore {s.index_var} {_names(s.vars)} {s.start_var} "
                f"{format_expr(s.default_start)})")
    if isinstance(s, ir.CoherenceCheck):
        return f"{pad}(coherence-check {_names(s.vars)})"
    raise TypeError(f"not a statement: {s!r}")


def _format_type(t) -> str:
    if isinstance(t, ir.ScalarType):
        return t.kind
    return "(array " + t.elem + "".join(" " + str(d) for d in t.dims) + ")"


def format_function(f: ir.FunctionIR) -> str:
    lines = [f"(function {f.name} {_names(f.params)}"]
    lines.append("  (symbols")
    for name in sorted(f.symbols):
        lines.append(f"    ({name} {_format_type(f.symbols[name])})")
    lines.append("  )")
    lines.append("  (body")
    lines += [format_stmt(s, 2) for s in f.body]
    lines.append("  ))")
    return "\n".join(lines) + "\n"


# -- parsing -------------------------------------------------------------------------

_RESERVED = {"true", "false", "inf", "-inf", "nan", "_"}


def _atom(tok):
    if isinstance(tok, _Str):
        return ir.Const(str(tok))
    if tok == "true":
        return ir.Const(True)
    if tok == "false":
        return ir.Const(False)
    if tok in ("inf", "-inf", "nan"):
        return ir.Const(float(tok))
    if re.fullmatch(r"-?\d+", tok):
        return ir.Const(int(tok))
    if re.fullmatch(r"-?(\d+\.\d*|\.\d+|\d+)([eE][-+]?\d+)?", tok):
        return ir.Const(float(tok))
    return ir.Var(tok)


def parse_expr(x):
    if not isinstance(x, list):
        return _atom(x)
    if not x:
        raise IRSyntaxError("empty expression")
    head = x[0]
    if head == "ref":
        return ir.ArrayRead(x[1], tuple(parse_expr(a) for a in x[2:]))
    if head == "call":
        return ir.KnownCall(x[1], tuple(parse_expr(a) for a in x[2:]))
    if head == "extern":
        return ir.UnknownCall(x[1], tuple(parse_expr(a) for a in x[2:]))
    if head == "comprehension":
        return ir.Comprehension(_parse_nests(x[1]), tuple(parse_stmt(s) for s in x[2:]))
    if head in ir.SCALAR_OPS:
        return ir.ScalarOp(head, tuple(parse_expr(a) for a in x[1:]))
    raise IRSyntaxError(f"unknown expression head {head!r}")


def _parse_nests(x):
    if not x or x[0] != "nests":
        raise IRSyntaxError("expected (nests ...)")
    return tuple(ir.LoopNest(n[0], parse_expr(n[1]), parse_expr(n[2])) for n in x[1:])


def parse_stmt(x):
    head = x[0]
    if head == "assign":
        return ir.Assign(None if x[1] == "_" else x[1], parse_expr(x[2]))
    if head == "write":
        return ir.ArrayWrite(x[1], tuple(parse_expr(a) for a in x[2]), parse_expr(x[3]))
    if head in ("alloc", "local-alloc"):
        cls = ir.Alloc if head == "alloc" else ir.LocalAlloc
        return cls(x[1], x[2], tuple(parse_expr(d) for d in x[3]))
    if head == "datasource":
        return ir.DataSource(x[1], str(x[2]), parse_expr(x[3]))
    if head == "datasink":
        return ir.DataSink(x[1], str(x[2]), parse_expr(x[3]))
    if head == "gemm":
        return ir.Gemm(x[1], x[2], x[3] == "T", x[4], x[5] == "T")
    if head == "for":
        return ir.ForLoop(x[1], parse_expr(x[2]), parse_expr(x[3]),
                          tuple(parse_stmt(s) for s in x[4:]))
    if head == "parfor":
        reds = x[3]
        if not reds or reds[0] != "reductions":
            raise IRSyntaxError("expected (reductions ...)")
        return ir.Parfor(int(x[1]), _parse_nests(x[2]),
                         tuple(ir.Reduction(r[0], float(r[1]), r[2]) for r in reds[1:]),
                         tuple(parse_stmt(s) for s in x[4:]))
    if head == "return":
        return ir.Return(tuple(x[1:]))
    if head == "partitioned":
        return ir.PartitionAnnotation(x[1], x[2])
    if head == "allreduce":
        return ir.Allreduce(x[1], x[2])
    if head == "block-read":
        return ir.BlockRead(x[1], str(x[2]), *(parse_expr(a) for a in x[3:6]))
    if head == "block-write":
        return ir.BlockWrite(x[1], str(x[2]), *(parse_expr(a) for a in x[3:7]))
    if head == "checkpoint":
        return ir.Checkpoint(x[1], tuple(x[2]))
    if head == "checkpoint-cleanup":
        return ir.CheckpointCleanup()
    if head == "restore":
        return ir.Restore(x[1], tuple(x[2]), x[3], parse_expr(x[4]))
    if head == "coherence-check":
        return ir.CoherenceCheck(tuple(x[1]))
    raise IRSyntaxError(f"unknown statement head {head!r}")


def _parse_type(x):
    if isinstance(x, list):
        if x[0] != "array":
            raise IRSyntaxError("expected (array ...)")
        return ir.ArrayType(x[1], tuple(int(d) if re.fullmatch(r"\d+", d) else d for d in x[2:]))
    return ir.ScalarType(x)


def parse_function(text: str) -> ir.FunctionIR:
    x = read_sexpr(text)
    if not isinstance(x, list) or x[0] != "function":
        raise IRSyntaxError("expected (function ...)")
    _, name, params, symbols, body = x
    if not isinstance(params, list) or symbols[:1] != ["symbols"] or body[:1] != ["body"]:
        raise IRSyntaxError("malformed function header")
    return ir.FunctionIR(name, tuple(params),
                         tuple(parse_stmt(s) for s in body[1:]),
                         {s[0]: _parse_type(s[1]) for s in symbols[1:]})

"""Surface syntax tree and its pretty-printer.

The printer fully parenthesizes operators so that re-parsing its output
yields an equal tree (spans are excluded from equality).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..ir import NO_SPAN, Span


def _span():
    return field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Num:
    value: int | float
    span: Span = _span()


@dataclass(frozen=True)
class Str:
    value: str
    span: Span = _span()


@dataclass(frozen=True)
class Name:
    id: str
    span: Span = _span()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    span: Span = _span()


@dataclass(frozen=True)
class Unary:
    op: str
    operand: object
    span: Span = _span()


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Colon:
    span: Span = _span()


@dataclass(frozen=True)
class Index:
    target: object
    indices: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Transpose:
    operand: object
    span: Span = _span()


@dataclass(frozen=True)
class Generator:
    var: str
    lo: object
    hi: object


@dataclass(frozen=True)
class Comprehension:
    elt: object
    gens: tuple
    span: Span = _span()


@dataclass(frozen=True)
class ArrayLit:
    items: tuple
    span: Span = _span()


@dataclass(frozen=True)
class TypeRef:
    name: str
    params: tuple
    span: Span = _span()


# statements

@dataclass(frozen=True)
class Assign:
    targets: tuple
    value: object
    op: str | None = None
    span: Span = _span()


@dataclass(frozen=True)
class For:
    var: str
    lo: object
    hi: object
    body: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Return:
    values: tuple
    span: Span = _span()


@dataclass(frozen=True)
class ExprStmt:
    expr: object
    span: Span = _span()


@dataclass(frozen=True)
class Partitioned:
    name: str
    span: Span = _span()


@dataclass(frozen=True)
class Param:
    name: str
    type: str | None = None


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple
    body: tuple
    externs: tuple = ()
    entry: bool = False
    span: Span = _span()


# -- pretty printing ---------------------------------------------------------------

def _num(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def show(e) -> str:
    if isinstance(e, Num):
        return _num(e.value)
    if isinstance(e, Str):
        return '"' + e.value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(e, Name):
        return e.id
    if isinstance(e, BinOp):
        return f"({show(e.left)} {e.op} {show(e.right)})"
    if isinstance(e, Unary):
        return f"({e.op}{show(e.operand)})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(map(show, e.args))})"
    if isinstance(e, Colon):
        return ":"
    if isinstance(e, Index):
        return f"{show(e.target)}[{', '.join(map(show, e.indices))}]"
    if isinstance(e, Transpose):
        return f"{show(e.operand)}'"
    if isinstance(e, Comprehension):
        gens = ", ".join(f"{g.var} in {show(g.lo)}:{show(g.hi)}" for g in e.gens)
        return f"[{show(e.elt)} for {gens}]"
    if isinstance(e, ArrayLit):
        return f"[{', '.join(map(show, e.items))}]"
    if isinstance(e, TypeRef):
        return f"{e.name}{{{', '.join(e.params)}}}"
    raise TypeError(f"cannot print {e!r}")


def show_stmt(s, indent: int = 1) -> str:
    pad = "    " * indent
    if isinstance(s, Assign):
        op = s.op + "=" if s.op else "="
        return f"{pad}{', '.join(s.targets)} {op} {show(s.value)}"
    if isinstance(s, For):
        lines = [f"{pad}for {s.var} in {show(s.lo)}:{show(s.hi)}"]
        lines += [show_stmt(b, indent + 1) for b in s.body]
        lines.append(f"{pad}end")
        return "\n".join(lines)
    if isinstance(s, Return):
        return f"{pad}return {', '.join(map(show, s.values))}".rstrip()
    if isinstance(s, ExprStmt):
        return pad + show(s.expr)
    if isinstance(s, Partitioned):
        return f"{pad}partitioned({s.name}, 2D)"
    raise TypeError(f"cannot print {s!r}")


def show_function(f: Function) -> str:
    lines = [f"extern {n}" for n in f.externs]
    params = ", ".join(p.name + (f"::{p.type}" if p.type else "") for p in f.params)
    lines.append(("entry " if f.entry else "") + f"function {f.name}({params})")
    lines += [show_stmt(s) for s in f.body]
    lines.append("end")
    return "\n".join(lines) + "\n"

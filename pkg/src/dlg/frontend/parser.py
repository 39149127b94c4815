"""Handwritten lexer and recursive-descent parser for ``.dlg`` sources."""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..ir import Span
from . import ast as A


class DlgSyntaxError(Exception):
    def __init__(self, message: str, span: Span, expected=(), path: str = "<input>"):
        self.message = message
        self.span = span
        self.expected = tuple(expected)
        self.path = path
        super().__init__(f"{path}:{span.line}:{span.col}: {message}")


@dataclass(frozen=True)
class Token:
    kind: str  # NAME NUM STR OP NEWLINE EOF TWO_D
    text: str
    span: Span


KEYWORDS = {"function", "entry", "end", "for", "in", "return", "extern"}

_OPS = sorted([
    ".+", ".-", ".*", "./", ".^", ".==", ".!=", ".<=", ".>=", ".<", ".>",
    "==", "!=", "<=", ">=", "&&", "||", "+=", "-=", "*=", "/=", "::",
    "+", "-", "*", "/", "^", "<", ">", "!", "=", "(", ")", "[", "]", "{", "}",
    ",", ":", ";", "'",
], key=len, reverse=True)

_NUM = re.compile(r"\d+(\.\d+|\.(?![*/^+\-=<>!.]))?([eE][-+]?\d+)?|\.\d+([eE][-+]?\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def tokenize(text: str, path: str = "<input>") -> list:
    toks = []
    i, line, col = 0, 1, 1
    depth = 0
    n = len(text)
    while i < n:
        c = text[i]
        span = Span(line, col)
        if c == "\n":
            if depth == 0:
                toks.append(Token("NEWLINE", "\n", span))
            i, line, col = i + 1, line + 1, 1
            continue
        if c in " \t\r":
            i, col = i + 1, col + 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c == '"':
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    j += 1
                if text[j] == "\n":
                    raise DlgSyntaxError("unterminated string", span, ('"',), path)
                buf.append(text[j])
                j += 1
            if j >= n:
                raise DlgSyntaxError("unterminated string", span, ('"',), path)
            toks.append(Token("STR", "".join(buf), span))
            col += j + 1 - i
            i = j + 1
            continue
        m = _NUM.match(text, i)
        if m and (c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit())):
            end = m.end()
            if text[i:end] == "2" and end < n and text[end] == "D" and \
                    not (end + 1 < n and (text[end + 1].isalnum() or text[end + 1] == "_")):
                toks.append(Token("TWO_D", "2D", span))
                col += 2
                i = end + 1
                continue
            toks.append(Token("NUM", text[i:end], span))
            col += end - i
            i = end
            continue
        m = _NAME.match(text, i)
        if m:
            toks.append(Token("NAME", m.group(), span))
            col += m.end() - i
            i = m.end()
            continue
        for op in _OPS:
            if text.startswith(op, i):
                if op in "([{":
                    depth += 1
                elif op in ")]}":
                    depth = max(0, depth - 1)
                toks.append(Token("OP", op, span))
                col += len(op)
                i += len(op)
                break
        else:
            raise DlgSyntaxError(f"unexpected character {c!r}", span, (), path)
    toks.append(Token("EOF", "", Span(line, col)))
    return toks


_CMP = {"==", "!=", "<", "<=", ">", ">=", ".==", ".!=", ".<", ".<=", ".>", ".>="}
_ADD = {"+", "-", ".+", ".-"}
_MUL = {"*", "/", ".*", "./"}
_POW = {"^", ".^"}


class Parser:
    def __init__(self, text: str, path: str = "<input>"):
        self.path = path
        self.toks = tokenize(text, path)
        self.pos = 0

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def at(self, kind, text=None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def at_op(self, *ops) -> bool:
        return self.tok.kind == "OP" and self.tok.text in ops

    def at_kw(self, kw) -> bool:
        return self.tok.kind == "NAME" and self.tok.text == kw

    def error(self, expected):
        t = self.tok
        found = "end of input" if t.kind == "EOF" else repr(t.text)
        exp = " or ".join(expected)
        raise DlgSyntaxError(f"expected {exp}, found {found}", t.span, expected, self.path)

    def expect_op(self, op) -> Token:
        if not self.at_op(op):
            self.error([f"'{op}'"])
        return self.advance()

    def expect_name(self, what="identifier") -> Token:
        if self.tok.kind != "NAME" or self.tok.text in KEYWORDS:
            self.error([what])
        return self.advance()

    def skip_newlines(self):
        while self.at("NEWLINE") or self.at_op(";"):
            self.advance()

    # -- program
    def parse_program(self) -> A.Function:
        self.skip_newlines()
        externs = []
        while self.at_kw("extern"):
            self.advance()
            externs.append(self.expect_name("function name").text)
            while self.at_op(","):
                self.advance()
                externs.append(self.expect_name("function name").text)
            self.end_stmt()
            self.skip_newlines()
        entry = False
        start = self.tok.span
        if self.at_kw("entry"):
            self.advance()
            entry = True
        if not self.at_kw("function"):
            self.error(["function"])
        self.advance()
        name = self.expect_name("function name").text
        self.expect_op("(")
        params = []
        if not self.at_op(")"):
            params.append(self.param())
            while self.at_op(","):
                self.advance()
                params.append(self.param())
        self.expect_op(")")
        body = self.block()
        self.skip_newlines()
        if not self.at("EOF"):
            self.error(["end of input"])
        return A.Function(name, tuple(params), body, tuple(externs), entry, start)

    def param(self) -> A.Param:
        name = self.expect_name("parameter").text
        typ = None
        if self.at_op("::"):
            self.advance()
            typ = self.expect_name("type").text
        return A.Param(name, typ)

    def block(self) -> tuple:
        """Statements up to and including the closing ``end``."""
        stmts = []
        while True:
            self.skip_newlines()
            if self.at_kw("end"):
                self.advance()
                return tuple(stmts)
            if self.at("EOF"):
                self.error(["'end'", "statement"])
            stmts.append(self.statement())

    def end_stmt(self):
        if self.at("NEWLINE") or self.at_op(";"):
            self.advance()
        elif not (self.at("EOF") or self.at_kw("end")):
            self.error(["end of statement"])

    def statement(self):
        t = self.tok
        if self.at_kw("for"):
            self.advance()
            var = self.expect_name("loop variable").text
            if not self.at_kw("in"):
                self.error(["'in'"])
            self.advance()
            lo = self.expr()
            self.expect_op(":")
            hi = self.expr()
            body = self.block()
            self.end_stmt()
            return A.For(var, lo, hi, body, t.span)
        if self.at_kw("return"):
            self.advance()
            values = []
            if not (self.at("NEWLINE") or self.at("EOF") or self.at_kw("end") or self.at_op(";")):
                values.append(self.expr())
                while self.at_op(","):
                    self.advance()
                    values.append(self.expr())
            self.end_stmt()
            if len(values) == 1 and isinstance(values[0], _Tuple):
                values = list(values[0].items)
            return A.Return(tuple(values), t.span)
        if self.at_kw("partitioned") and self.peek().kind == "OP" and self.peek().text == "(":
            self.advance()
            self.expect_op("(")
            name = self.expect_name("array name").text
            self.expect_op(",")
            if not self.at("TWO_D"):
                self.error(["2D"])
            self.advance()
            self.expect_op(")")
            self.end_stmt()
            return A.Partitioned(name, t.span)
        # assignment: NAME (, NAME)* (= | op=) expr
        if self.tok.kind == "NAME" and self.tok.text not in KEYWORDS:
            k = 1
            while self.peek(k).kind == "OP" and self.peek(k).text == "," \
                    and self.peek(k + 1).kind == "NAME":
                k += 2
            nxt = self.peek(k)
            if nxt.kind == "OP" and nxt.text in ("=", "+=", "-=", "*=", "/="):
                targets = [self.advance().text]
                while self.at_op(","):
                    self.advance()
                    targets.append(self.advance().text)
                op = self.advance().text
                value = self.expr()
                self.end_stmt()
                return A.Assign(tuple(targets), value, None if op == "=" else op[0], t.span)
        e = self.expr()
        self.end_stmt()
        return A.ExprStmt(e, t.span)

    # -- expressions
    def expr(self):
        return self.or_expr()

    def _binary(self, ops, sub):
        left = sub()
        while self.at_op(*ops):
            t = self.advance()
            left = A.BinOp(t.text, left, sub(), t.span)
        return left

    def or_expr(self):
        return self._binary({"||"}, self.and_expr)

    def and_expr(self):
        return self._binary({"&&"}, self.cmp_expr)

    def cmp_expr(self):
        return self._binary(_CMP, self.add_expr)

    def add_expr(self):
        return self._binary(_ADD, self.mul_expr)

    def mul_expr(self):
        return self._binary(_MUL, self.unary_expr)

    def unary_expr(self):
        if self.at_op("-", "!", "+"):
            t = self.advance()
            operand = self.unary_expr()
            if t.text == "+":
                return operand
            return A.Unary(t.text, operand, t.span)
        return self.pow_expr()

    def pow_expr(self):
        base = self.postfix()
        if self.at_op(*_POW):
            t = self.advance()
            if self.at_op("-", "!", "+"):
                exp = self.unary_expr()
            else:
                exp = self.pow_expr()
            return A.BinOp(t.text, base, exp, t.span)
        return base

    def postfix(self):
        e = self.primary()
        while True:
            if self.at_op("["):
                t = self.advance()
                idx = [self.index_item()]
                while self.at_op(","):
                    self.advance()
                    idx.append(self.index_item())
                self.expect_op("]")
                e = A.Index(e, tuple(idx), t.span)
            elif self.at_op("'"):
                t = self.advance()
                e = A.Transpose(e, t.span)
            else:
                return e

    def index_item(self):
        if self.at_op(":") and self.peek().kind == "OP" and self.peek().text in (",", "]"):
            return A.Colon(self.advance().span)
        return self.expr()

    def primary(self):
        t = self.tok
        if t.kind == "NUM":
            self.advance()
            text = t.text
            if re.fullmatch(r"\d+", text):
                return A.Num(int(text), t.span)
            return A.Num(float(text), t.span)
        if t.kind == "STR":
            self.advance()
            return A.Str(t.text, t.span)
        if t.kind == "NAME" and t.text not in KEYWORDS:
            self.advance()
            if self.at_op("("):
                self.advance()
                args = []
                if not self.at_op(")"):
                    args.append(self.expr())
                    while self.at_op(","):
                        self.advance()
                        args.append(self.expr())
                self.expect_op(")")
                return A.Call(t.text, tuple(args), t.span)
            if self.at_op("{"):
                self.advance()
                params = [self.expect_name("type parameter").text]
                while self.at_op(","):
                    self.advance()
                    params.append(self.expect_name("type parameter").text)
                self.expect_op("}")
                return A.TypeRef(t.text, tuple(params), t.span)
            return A.Name(t.text, t.span)
        if self.at_op("("):
            self.advance()
            e = self.expr()
            if self.at_op(","):
                items = [e]
                while self.at_op(","):
                    self.advance()
                    items.append(self.expr())
                self.expect_op(")")
                return _Tuple(tuple(items), t.span)
            self.expect_op(")")
            return e
        if self.at_op("["):
            self.advance()
            first = self.expr()
            if self.at_kw("for"):
                gens = [self.generator()]
                while self.at_op(","):
                    self.advance()
                    gens.append(self.generator(False))
                self.expect_op("]")
                return A.Comprehension(first, tuple(gens), t.span)
            items = [first]
            while self.at_op(","):
                self.advance()
                items.append(self.expr())
            self.expect_op("]")
            return A.ArrayLit(tuple(items), t.span)
        self.error(["expression"])

    def generator(self, need_for=True) -> A.Generator:
        if need_for:
            self.advance()  # 'for'
        var = self.expect_name("generator variable").text
        if not self.at_kw("in"):
            self.error(["'in'"])
        self.advance()
        lo = self.expr()
        self.expect_op(":")
        hi = self.expr()
        return A.Generator(var, lo, hi)


@dataclass(frozen=True)
class _Tuple:
    items: tuple
    span: Span = Span()


def parse(text: str, path: str = "<input>") -> A.Function:
    """Parse a source program into an AST with spans."""
    return Parser(text, path).parse_program()


def parse_expression(text: str) -> object:
    p = Parser(text)
    e = p.expr()
    p.skip_newlines()
    if not p.at("EOF"):
        p.error(["end of input"])
    return e

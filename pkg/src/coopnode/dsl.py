"""The safe-query language: lexer, AST, parser and printer.

A closed-form language keeps algorithm vetting decidable: there is no
general computation, only aggregate combinators over record fields with an
optional row filter. Grammar (whitespace-insensitive)::

    program    := mode expr filter?
    mode       := "aggregate" | "subject"
    expr       := agg | group | fexpr          # bare fexpr = projection
    group      := "groupby" "(" key "," agg ")"
    agg        := "count" "(" ")" | ("sum"|"mean"|"min"|"max") "(" fexpr ")"
                | "histogram" "(" fexpr "," number "," number "," number ")"
    fexpr      := field | number | fexpr ("+"|"-"|"*"|"/") fexpr | "(" fexpr ")"
    key        := field | "bucket" "(" field "," number ")"
                | "geosector" "(" field "," number ")"
    filter     := "where" pred
    pred       := fexpr cmpop fexpr | pred ("and"|"or") pred | "(" pred ")"

A bare field expression as the whole body is a *projection*; the vetter
rejects projections in aggregate mode (rule R1).
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field as dc_field
from typing import Optional, Union

RESERVED = {
    "aggregate", "subject", "groupby", "count", "sum", "mean", "min", "max",
    "histogram", "bucket", "geosector", "where", "and", "or",
}

AGG_NAMES = {"count", "sum", "mean", "min", "max", "histogram"}
CMP_OPS = ("<=", ">=", "==", "!=", "<", ">")


class ParseError(Exception):
    def __init__(self, line: int, col: int, expected: str) -> None:
        super().__init__(f"{line}:{col}: expected {expected}")
        self.line = line
        self.col = col
        self.expected = expected


# ---------------------------------------------------------------- AST

@dataclass(frozen=True)
class Span:
    line: int
    col: int


def _span_field():
    return dc_field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Field:
    name: str
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class Num:
    value: float
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: "FExpr"
    right: "FExpr"
    span: Optional[Span] = _span_field()


FExpr = Union[Field, Num, BinOp]


@dataclass(frozen=True)
class Agg:
    fn: str  # count sum mean min max histogram
    arg: Optional[FExpr] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    width: Optional[float] = None
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class GroupKey:
    kind: str  # field | bucket | geosector
    field: Field = None
    param: Optional[float] = None
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class GroupBy:
    key: GroupKey
    agg: Agg
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class Projection:
    expr: FExpr
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class Cmp:
    op: str
    left: FExpr
    right: FExpr
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class BoolOp:
    op: str  # and | or
    left: "Pred"
    right: "Pred"
    span: Optional[Span] = _span_field()


Pred = Union[Cmp, BoolOp]


@dataclass(frozen=True)
class Program:
    mode: str  # aggregate | subject
    body: Union[Agg, GroupBy, Projection]
    where: Optional[Pred] = None
    span: Optional[Span] = _span_field()


# ---------------------------------------------------------------- lexer

@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | punct | eof
    text: str
    line: int
    col: int


_PUNCT2 = ("<=", ">=", "==", "!=")
_PUNCT1 = "()+-*/<>,"
_IDENT_START = set(string.ascii_letters + "_")
_IDENT_CONT = _IDENT_START | set(string.digits)


def _tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col, i = 1, 1, 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start_col = col
        two = source[i : i + 2]
        if two in _PUNCT2:
            tokens.append(Token("punct", two, line, start_col))
            i += 2
            col += 2
            continue
        if ch in _IDENT_START:
            j = i
            while j < n and source[j] in _IDENT_CONT:
                j += 1
            tokens.append(Token("ident", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot)):
                seen_dot = seen_dot or source[j] == "."
                j += 1
            tokens.append(Token("number", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch in _PUNCT1:
            tokens.append(Token("punct", ch, line, start_col))
            i += 1
            col += 1
            continue
        raise ParseError(line, start_col, "valid token")
    tokens.append(Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------- parser

class _Parser:
    def __init__(self, source: str) -> None:
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, expected: str):
        tok = self.peek()
        raise ParseError(tok.line, tok.col, expected)

    def expect_punct(self, text: str) -> Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.text != text:
            self.fail(f"'{text}'")
        return self.next()

    def expect_ident(self, *names: str) -> Token:
        tok = self.peek()
        if tok.kind != "ident" or (names and tok.text not in names):
            self.fail(" or ".join(f"'{n}'" for n in names) or "identifier")
        return self.next()

    def expect_number(self) -> float:
        tok = self.peek()
        if tok.kind != "number":
            self.fail("number")
        self.next()
        return float(tok.text)

    # program := mode expr filter?  (a missing mode defaults to aggregate)
    def program(self) -> Program:
        tok = self.peek()
        if tok.kind == "ident" and tok.text in ("aggregate", "subject"):
            mode = self.next().text
        else:
            mode = "aggregate"
        body = self.expr()
        where = None
        if self.peek().kind == "ident" and self.peek().text == "where":
            self.next()
            where = self.pred()
        if self.peek().kind != "eof":
            self.fail("end of program")
        return Program(mode, body, where, span=Span(tok.line, tok.col))

    def expr(self):
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "groupby":
            return self.group()
        if tok.kind == "ident" and tok.text in AGG_NAMES:
            return self.agg()
        fx = self.fexpr()
        return Projection(fx, span=Span(tok.line, tok.col))

    def group(self) -> GroupBy:
        tok = self.expect_ident("groupby")
        self.expect_punct("(")
        key = self.group_key()
        self.expect_punct(",")
        agg = self.agg()
        self.expect_punct(")")
        return GroupBy(key, agg, span=Span(tok.line, tok.col))

    def group_key(self) -> GroupKey:
        tok = self.peek()
        if tok.kind == "ident" and tok.text in ("bucket", "geosector"):
            kind = self.next().text
            self.expect_punct("(")
            fld = self.field()
            self.expect_punct(",")
            param = self.expect_number()
            self.expect_punct(")")
            return GroupKey(kind, fld, param, span=Span(tok.line, tok.col))
        fld = self.field()
        return GroupKey("field", fld, span=Span(tok.line, tok.col))

    def agg(self) -> Agg:
        tok = self.expect_ident(*AGG_NAMES)
        self.expect_punct("(")
        if tok.text == "count":
            self.expect_punct(")")
            return Agg("count", span=Span(tok.line, tok.col))
        arg = self.fexpr()
        if tok.text == "histogram":
            self.expect_punct(",")
            lo = self.expect_number()
            self.expect_punct(",")
            hi = self.expect_number()
            self.expect_punct(",")
            width = self.expect_number()
            self.expect_punct(")")
            return Agg("histogram", arg, lo, hi, width, span=Span(tok.line, tok.col))
        self.expect_punct(")")
        return Agg(tok.text, arg, span=Span(tok.line, tok.col))

    def field(self) -> Field:
        tok = self.peek()
        if tok.kind != "ident" or tok.text in RESERVED:
            self.fail("field name")
        self.next()
        return Field(tok.text, span=Span(tok.line, tok.col))

    # fexpr with the usual precedence; parens are not AST nodes
    def fexpr(self) -> FExpr:
        left = self.fterm()
        while self.peek().kind == "punct" and self.peek().text in "+-":
            op = self.next().text
            right = self.fterm()
            left = BinOp(op, left, right, span=left.span)
        return left

    def fterm(self) -> FExpr:
        left = self.fatom()
        while self.peek().kind == "punct" and self.peek().text in "*/":
            op = self.next().text
            right = self.fatom()
            left = BinOp(op, left, right, span=left.span)
        return left

    def fatom(self) -> FExpr:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            self.next()
            inner = self.fexpr()
            self.expect_punct(")")
            return inner
        if tok.kind == "number":
            self.next()
            return Num(float(tok.text), span=Span(tok.line, tok.col))
        if tok.kind == "ident" and tok.text not in RESERVED:
            self.next()
            return Field(tok.text, span=Span(tok.line, tok.col))
        self.fail("field expression")

    # pred: "or" binds loosest, then "and", then comparisons
    def pred(self) -> Pred:
        left = self.andpred()
        while self.peek().kind == "ident" and self.peek().text == "or":
            self.next()
            right = self.andpred()
            left = BoolOp("or", left, right, span=left.span)
        return left

    def andpred(self) -> Pred:
        left = self.cmppred()
        while self.peek().kind == "ident" and self.peek().text == "and":
            self.next()
            right = self.cmppred()
            left = BoolOp("and", left, right, span=left.span)
        return left

    def cmppred(self) -> Pred:
        # "(" is ambiguous between a grouped pred and a grouped fexpr;
        # resolve by backtracking on the pred reading first.
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            saved = self.pos
            try:
                self.next()
                inner = self.pred()
                self.expect_punct(")")
                return inner
            except ParseError:
                self.pos = saved
        left = self.fexpr()
        op_tok = self.peek()
        if op_tok.kind != "punct" or op_tok.text not in CMP_OPS:
            self.fail("comparison operator")
        self.next()
        right = self.fexpr()
        return Cmp(op_tok.text, left, right, span=Span(tok.line, tok.col))


def parse(source: str) -> Program:
    return _Parser(source).program()


# ---------------------------------------------------------------- printer

def _fmt_num(v: float) -> str:
    if v == int(v):
        return str(int(v))
    return repr(v)


def _print_fexpr(e: FExpr) -> str:
    if isinstance(e, Field):
        return e.name
    if isinstance(e, Num):
        return _fmt_num(e.value)
    return f"({_print_fexpr(e.left)} {e.op} {_print_fexpr(e.right)})"


def _print_pred(p: Pred) -> str:
    if isinstance(p, Cmp):
        return f"{_print_fexpr(p.left)} {p.op} {_print_fexpr(p.right)}"
    return f"({_print_pred(p.left)} {p.op} {_print_pred(p.right)})"


def _print_agg(a: Agg) -> str:
    if a.fn == "count":
        return "count()"
    if a.fn == "histogram":
        return (
            f"histogram({_print_fexpr(a.arg)}, {_fmt_num(a.lo)}, "
            f"{_fmt_num(a.hi)}, {_fmt_num(a.width)})"
        )
    return f"{a.fn}({_print_fexpr(a.arg)})"


def _print_key(k: GroupKey) -> str:
    if k.kind == "field":
        return k.field.name
    return f"{k.kind}({k.field.name}, {_fmt_num(k.param)})"


def print_program(p: Program) -> str:
    if isinstance(p.body, GroupBy):
        body = f"groupby({_print_key(p.body.key)}, {_print_agg(p.body.agg)})"
    elif isinstance(p.body, Agg):
        body = _print_agg(p.body)
    else:
        body = _print_fexpr(p.body.expr)
    out = f"{p.mode} {body}"
    if p.where is not None:
        out += f" where {_print_pred(p.where)}"
    return out


# ---------------------------------------------------------------- helpers

def referenced_fields(p: Program) -> set[str]:
    names: set[str] = set()

    def walk_fexpr(e: FExpr) -> None:
        if isinstance(e, Field):
            names.add(e.name)
        elif isinstance(e, BinOp):
            walk_fexpr(e.left)
            walk_fexpr(e.right)

    def walk_pred(pr: Pred) -> None:
        if isinstance(pr, Cmp):
            walk_fexpr(pr.left)
            walk_fexpr(pr.right)
        else:
            walk_pred(pr.left)
            walk_pred(pr.right)

    body = p.body
    if isinstance(body, GroupBy):
        names.add(body.key.field.name)
        if body.agg.arg is not None:
            walk_fexpr(body.agg.arg)
    elif isinstance(body, Agg):
        if body.arg is not None:
            walk_fexpr(body.arg)
    else:
        walk_fexpr(body.expr)
    if p.where is not None:
        walk_pred(p.where)
    return names

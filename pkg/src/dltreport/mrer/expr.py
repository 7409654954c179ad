"""Infix expression language used by report templates.

Grammar (EBNF)::

    expr     = or_expr ;
    or_expr  = and_expr , { "OR" , and_expr } ;
    and_expr = not_expr , { "AND" , not_expr } ;
    not_expr = "NOT" , not_expr | compare ;
    compare  = sum , [ cmp_op , sum ] ;
    cmp_op   = "=" | "!=" | "<" | "<=" | ">" | ">=" ;
    sum      = term , { ( "+" | "-" ) , term } ;
    term     = unary , { ( "*" | "/" ) , unary } ;
    unary    = "-" , unary | atom ;
    atom     = number | string | call | identifier | "(" , expr , ")" ;
    call     = ( "min" | "max" ) , "(" , expr , "," , expr , ")" ;
    number   = digit , { digit } , [ "." , digit , { digit } ] ;
    string   = '"' , { any character except '"' or '\\' | "\\" , any } , '"' ;

The typographic operators ``≤ ≥ ≠ × ÷`` are accepted as aliases and are
rendered back in ASCII. Numbers are exact rationals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Union

from ..errors import TemplateError
from ..numeric import exact_decimal_text

MAX_DEPTH = 64
MAX_LENGTH = 4096

KEYWORDS = {"AND", "OR", "NOT"}
FUNCTIONS = {"min", "max"}
COMPARISONS = {"=", "!=", "<", "<=", ">", ">="}
ALIASES = {"≤": "<=", "≥": ">=", "≠": "!=", "×": "*", "÷": "/", "==": "=", "<>": "!="}

# -- AST ------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: Fraction


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Name:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "-" or "NOT"
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Union[Num, Str, Name, Unary, Binary, Call]

# -- types ----------------------------------------------------------------------

NUM = "num"
BOOL = "bool"
STR = "str"


@dataclass(frozen=True)
class EnumType:
    name: str
    values: frozenset


FieldType = Union[str, EnumType]

# -- lexer ----------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|==|<>|[=<>+\-*/(),≤≥≠×÷])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num, str, ident, kw, op, end
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    if len(text) > MAX_LENGTH:
        raise TemplateError("SYNTAX_ERROR", "expression too long", 0)
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise TemplateError("SYNTAX_ERROR", f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tok = m.group()
        if kind == "ident" and tok in KEYWORDS:
            kind = "kw"
        elif kind == "op":
            tok = ALIASES.get(tok, tok)
        if kind != "ws":
            tokens.append(Token(kind, tok, pos))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


# -- parser ---------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.depth = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text or "end of input"
            raise TemplateError("SYNTAX_ERROR", f"expected {want!r}, got {got!r}", t.pos)
        return self.advance()

    def at(self, kind: str, *texts: str) -> bool:
        t = self.tok
        return t.kind == kind and (not texts or t.text in texts)

    def parse(self) -> Node:
        node = self.or_expr()
        if self.tok.kind != "end":
            raise TemplateError("SYNTAX_ERROR", f"unexpected {self.tok.text!r}", self.tok.pos)
        return node

    def _nest(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise TemplateError("SYNTAX_ERROR", "expression nested too deeply", self.tok.pos)

    def or_expr(self) -> Node:
        node = self.and_expr()
        while self.at("kw", "OR"):
            self.advance()
            node = Binary("OR", node, self.and_expr())
        return node

    def and_expr(self) -> Node:
        node = self.not_expr()
        while self.at("kw", "AND"):
            self.advance()
            node = Binary("AND", node, self.not_expr())
        return node

    def not_expr(self) -> Node:
        if self.at("kw", "NOT"):
            self.advance()
            self._nest()
            node = Unary("NOT", self.not_expr())
            self.depth -= 1
            return node
        return self.compare()

    def compare(self) -> Node:
        node = self.sum()
        if self.at("op", *COMPARISONS):
            op = self.advance().text
            node = Binary(op, node, self.sum())
            if self.at("op", *COMPARISONS):
                raise TemplateError("SYNTAX_ERROR", "comparisons do not chain", self.tok.pos)
        return node

    def sum(self) -> Node:
        node = self.term()
        while self.at("op", "+", "-"):
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.at("op", "*", "/"):
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.at("op", "-"):
            self.advance()
            self._nest()
            node = Unary("-", self.unary())
            self.depth -= 1
            return node
        return self.atom()

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(Fraction(t.text))
        if t.kind == "str":
            self.advance()
            return Str(re.sub(r"\\(.)", r"\1", t.text[1:-1]))
        if t.kind == "ident":
            self.advance()
            if self.at("op", "("):
                if t.text not in FUNCTIONS:
                    raise TemplateError("SYNTAX_ERROR", f"unknown function {t.text!r}", t.pos)
                self.advance()
                self._nest()
                a = self.or_expr()
                self.expect("op", ",")
                b = self.or_expr()
                self.expect("op", ")")
                self.depth -= 1
                return Call(t.text, (a, b))
            return Name(t.text)
        if t.kind == "op" and t.text == "(":
            self.advance()
            self._nest()
            node = self.or_expr()
            self.expect("op", ")")
            self.depth -= 1
            return node
        raise TemplateError("SYNTAX_ERROR", f"unexpected {t.text or 'end of input'!r}", t.pos)


def parse_expression(text: str) -> Node:
    if not isinstance(text, str):
        raise TemplateError("SYNTAX_ERROR", "expression must be a string")
    return _Parser(text).parse()


# -- rendering ------------------------------------------------------------------


def _render_num(value: Fraction) -> str:
    text = exact_decimal_text(value)
    if text is None:
        return f"({value.numerator} / {value.denominator})"
    return text


def render(node: Node) -> str:
    """Canonical, fully parenthesised text that parses back to an equal AST."""
    if isinstance(node, Num):
        return _render_num(node.value)
    if isinstance(node, Str):
        escaped = node.value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(node, Name):
        return node.name
    if isinstance(node, Unary):
        sep = " " if node.op == "NOT" else ""
        return f"({node.op}{sep}{render(node.operand)})"
    if isinstance(node, Binary):
        return f"({render(node.left)} {node.op} {render(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(render(a) for a in node.args)})"
    raise TypeError(node)


def names(node: Node) -> list[str]:
    """Identifiers referenced by ``node`` in first-occurrence order."""
    out: list[str] = []

    def walk(n):
        if isinstance(n, Name):
            if n.name not in out:
                out.append(n.name)
        elif isinstance(n, Unary):
            walk(n.operand)
        elif isinstance(n, Binary):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Call):
            for a in n.args:
                walk(a)

    walk(node)
    return out


# -- type checking --------------------------------------------------------------


def _is_textual(t) -> bool:
    return t == STR or isinstance(t, EnumType)


def check(node: Node, env: Mapping[str, FieldType], *, allow_division: bool,
          unknown_code: str = "UNKNOWN_FIELD"):
    """Return the type of ``node`` under ``env`` or raise TemplateError."""
    if isinstance(node, Num):
        return NUM
    if isinstance(node, Str):
        return ("literal", node.value)
    if isinstance(node, Name):
        if node.name not in env:
            raise TemplateError(unknown_code, f"unknown identifier {node.name!r}")
        return env[node.name]
    if isinstance(node, Unary):
        t = check(node.operand, env, allow_division=allow_division, unknown_code=unknown_code)
        want = BOOL if node.op == "NOT" else NUM
        if t != want:
            raise TemplateError("TYPE_MISMATCH", f"{node.op} needs a {want} operand")
        return want
    if isinstance(node, Call):
        for a in node.args:
            if check(a, env, allow_division=allow_division, unknown_code=unknown_code) != NUM:
                raise TemplateError("TYPE_MISMATCH", f"{node.func}() takes numeric arguments")
        return NUM
    if isinstance(node, Binary):
        lt = check(node.left, env, allow_division=allow_division, unknown_code=unknown_code)
        rt = check(node.right, env, allow_division=allow_division, unknown_code=unknown_code)
        op = node.op
        if op in ("AND", "OR"):
            if lt != BOOL or rt != BOOL:
                raise TemplateError("TYPE_MISMATCH", f"{op} needs boolean operands")
            return BOOL
        if op in ("+", "-", "*", "/"):
            if op == "/" and not allow_division:
                raise TemplateError("TYPE_MISMATCH", "division is only allowed in derivations and validations")
            if lt != NUM or rt != NUM:
                raise TemplateError("TYPE_MISMATCH", f"{op} needs numeric operands")
            return NUM
        # comparisons
        if lt == NUM and rt == NUM:
            return BOOL
        textual = [t for t in (lt, rt) if _is_textual(t) or isinstance(t, tuple)]
        if len(textual) == 2:
            if op not in ("=", "!="):
                raise TemplateError("TYPE_MISMATCH", f"{op} is not defined on text")
            for t, other in ((lt, rt), (rt, lt)):
                if isinstance(t, EnumType) and isinstance(other, tuple) and other[1] not in t.values:
                    raise TemplateError(
                        "TYPE_MISMATCH", f"{other[1]!r} is not a {t.name} value")
                if isinstance(t, EnumType) and isinstance(other, EnumType) and t != other:
                    raise TemplateError("TYPE_MISMATCH", f"cannot compare {t.name} with {other.name}")
            return BOOL
        if lt == BOOL and rt == BOOL and op in ("=", "!="):
            return BOOL
        raise TemplateError("TYPE_MISMATCH", f"cannot compare {_tname(lt)} with {_tname(rt)} using {op}")
    raise TypeError(node)


def _tname(t) -> str:
    if isinstance(t, EnumType):
        return t.name
    if isinstance(t, tuple):
        return "string literal"
    return t


# -- compiled evaluation --------------------------------------------------------

Evaluator = Callable[[Mapping, list], object]

_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def compile_expr(node: Node) -> Evaluator:
    """Compile an AST into a closure ``f(env, div_zero_log)``.

    Division by zero yields 0 and appends the offending node to ``div_zero_log``.
    """
    if isinstance(node, Num):
        v = node.value
        if v.denominator == 1:
            v = v.numerator
        return lambda env, log: v
    if isinstance(node, Str):
        s = node.value
        return lambda env, log: s
    if isinstance(node, Name):
        key = node.name
        return lambda env, log: env[key]
    if isinstance(node, Unary):
        f = compile_expr(node.operand)
        if node.op == "NOT":
            return lambda env, log: not f(env, log)
        return lambda env, log: -f(env, log)
    if isinstance(node, Call):
        a, b = (compile_expr(x) for x in node.args)
        fn = min if node.func == "min" else max
        return lambda env, log: fn(a(env, log), b(env, log))
    if isinstance(node, Binary):
        lf = compile_expr(node.left)
        rf = compile_expr(node.right)
        op = node.op
        if op == "AND":
            return lambda env, log: lf(env, log) and rf(env, log)
        if op == "OR":
            return lambda env, log: lf(env, log) or rf(env, log)
        if op == "+":
            return lambda env, log: lf(env, log) + rf(env, log)
        if op == "-":
            return lambda env, log: lf(env, log) - rf(env, log)
        if op == "*":
            return lambda env, log: lf(env, log) * rf(env, log)
        if op == "/":
            def divide(env, log):
                num = lf(env, log)
                den = rf(env, log)
                if den == 0:
                    log.append(node)
                    return 0
                return Fraction(num) / den
            return divide
        cmp = _CMP[op]
        return lambda env, log: cmp(lf(env, log), rf(env, log))
    raise TypeError(node)

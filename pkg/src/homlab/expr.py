"""Arithmetic expression language for user-supplied fields and initial data.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | NAME | NAME '(' args ')' | '(' expr ')'

``pi`` and ``e`` are reserved constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Num",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExprAst",
    "ParseError",
    "ExprSyntaxError",
    "UnknownIdentifier",
    "ArityError",
    "DomainError",
    "FUNCTIONS",
    "CONSTANTS",
    "parse",
    "evaluate",
    "to_text",
    "free_variables",
    "compile_scalar",
    "compile_array",
]


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "ExprAst"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "ExprAst"
    right: "ExprAst"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


ExprAst = Union[Num, Const, Var, Neg, BinOp, Call]

CONSTANTS = {"pi": math.pi, "e": math.e}

# name -> arity
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "abs": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "floor": 1,
    "min": 2,
    "max": 2,
}


class ParseError(ValueError):
    """Base class for parse failures; ``offset`` is a byte offset into the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprSyntaxError(ParseError):
    pass


class UnknownIdentifier(ParseError):
    pass


class ArityError(ParseError):
    pass


class DomainError(ArithmeticError):
    """Raised by evaluation when an operation leaves its real domain."""

    def __init__(self, node, message: str):
        super().__init__(f"{message} in {to_text(node)}")
        self.node = node


# -- tokenizer -------------------------------------------------------------

_PUNCT = set("+-*/^(),")


def _tokenize(source: str):
    """Yield (kind, text, offset) triples; offsets are byte offsets."""
    tokens = []
    i = 0
    n = len(source)
    byte = 0

    def nbytes(s):
        return len(s.encode("utf-8"))

    while i < n:
        c = source[i]
        if c.isspace():
            byte += nbytes(c)
            i += 1
            continue
        start, start_byte = i, byte
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            while i < n and (source[i].isdigit() or source[i] == "."):
                i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j < n and source[j].isdigit():
                    i = j
                    while i < n and source[i].isdigit():
                        i += 1
            text = source[start:i]
            try:
                float(text)
            except ValueError:
                raise ExprSyntaxError(f"malformed number {text!r}", start_byte) from None
            tokens.append(("num", text, start_byte))
        elif c.isalpha() or c == "_":
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            tokens.append(("name", source[start:i], start_byte))
        elif c in _PUNCT:
            i += 1
            tokens.append(("op", c, start_byte))
        else:
            raise ExprSyntaxError(f"unexpected character {c!r}", start_byte)
        byte = start_byte + nbytes(source[start:i])
    tokens.append(("end", "", byte))
    return tokens


# -- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, source: str, variables: Sequence[str]):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.variables = frozenset(variables)

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        if tok[0] != "end":
            self.pos += 1
        return tok

    def expect(self, text):
        kind, tok_text, offset = self.peek()
        if kind != "op" or tok_text != text:
            found = "end of input" if kind == "end" else repr(tok_text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", offset)
        self.advance()

    def parse(self):
        node = self.expr()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", offset)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, offset = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                return self.call(text, offset)
            if text in self.variables:
                return Var(text)
            if text in CONSTANTS:
                return Const(text)
            if text in FUNCTIONS:
                raise ExprSyntaxError(f"function {text!r} needs arguments", offset)
            raise UnknownIdentifier(f"unknown identifier {text!r}", offset)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"expected operand, found {found}", offset)

    def call(self, name, offset):
        if name not in FUNCTIONS:
            raise UnknownIdentifier(f"unknown function {name!r}", offset)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[:2] == ("op", ","):
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            raise ArityError(
                f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", offset
            )
        return Call(name, tuple(args))


def parse(source: str, variables: Sequence[str] = ()) -> ExprAst:
    """Parse ``source`` into an AST over the declared ``variables``."""
    if len(set(variables)) != len(variables):
        raise ValueError("variable names must be distinct")
    reserved = (set(CONSTANTS) | set(FUNCTIONS)) & set(variables)
    if reserved:
        raise ValueError(f"reserved names used as variables: {sorted(reserved)}")
    if not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source, variables).parse()


# -- printing --------------------------------------------------------------


def _num_text(x: float) -> str:
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


def to_text(node: ExprAst) -> str:
    """Fully parenthesized canonical form; ``parse(to_text(a)) == a``."""
    if isinstance(node, Num):
        return _num_text(node.value)
    if isinstance(node, (Const, Var)):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def free_variables(node: ExprAst) -> frozenset:
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Neg):
        return free_variables(node.operand)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    if isinstance(node, Call):
        return frozenset().union(*(free_variables(a) for a in node.args))
    return frozenset()


# -- evaluation ------------------------------------------------------------


def _checked_div(node):
    def div(a, b):
        if b == 0.0:
            raise DomainError(node, "division by zero")
        return a / b

    return div


def _checked_pow(node):
    def power(a, b):
        try:
            r = a**b
        except ZeroDivisionError:
            raise DomainError(node, "zero to a negative power") from None
        except OverflowError:
            raise DomainError(node, "overflow") from None
        if isinstance(r, complex):
            raise DomainError(node, "negative base with fractional exponent")
        return r

    return power


def _scalar_func(node):
    name = node.func
    if name == "log":

        def log(x):
            if x <= 0.0:
                raise DomainError(node, "log of non-positive value")
            return math.log(x)

        return log
    if name == "sqrt":

        def sqrt(x):
            if x < 0.0:
                raise DomainError(node, "sqrt of negative value")
            return math.sqrt(x)

        return sqrt
    if name == "exp":

        def exp(x):
            try:
                return math.exp(x)
            except OverflowError:
                raise DomainError(node, "overflow") from None

        return exp
    if name == "tan":

        def tan(x):
            return math.tan(x)

        return tan
    if name == "floor":
        return lambda x: float(math.floor(x))
    return {"sin": math.sin, "cos": math.cos, "abs": abs, "min": min, "max": max}[name]


def compile_scalar(node: ExprAst, variables: Sequence[str]) -> Callable[..., float]:
    """Compile to a float function of the positional ``variables``.

    Domain violations raise :class:`DomainError`.
    """
    index = {name: i for i, name in enumerate(variables)}

    def build(n):
        if isinstance(n, Num):
            value = n.value
            return lambda env: value
        if isinstance(n, Const):
            value = CONSTANTS[n.name]
            return lambda env: value
        if isinstance(n, Var):
            i = index[n.name]
            return lambda env: env[i]
        if isinstance(n, Neg):
            inner = build(n.operand)
            return lambda env: -inner(env)
        if isinstance(n, BinOp):
            a, b = build(n.left), build(n.right)
            if n.op == "+":
                return lambda env: a(env) + b(env)
            if n.op == "-":
                return lambda env: a(env) - b(env)
            if n.op == "*":
                return lambda env: a(env) * b(env)
            fn = _checked_div(n) if n.op == "/" else _checked_pow(n)
            return lambda env: fn(a(env), b(env))
        if isinstance(n, Call):
            fn = _scalar_func(n)
            parts = [build(arg) for arg in n.args]
            if len(parts) == 1:
                (p,) = parts
                return lambda env: fn(p(env))
            p, q = parts
            return lambda env: fn(p(env), q(env))
        raise TypeError(f"not an expression node: {n!r}")

    body = build(node)

    def f(*args):
        return float(body(args))

    return f


_ARRAY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "floor": np.floor,
    "min": np.minimum,
    "max": np.maximum,
}


def compile_array(node: ExprAst, variables: Sequence[str]) -> Callable[..., np.ndarray]:
    """Compile to a numpy-broadcasting function.

    Domain violations produce non-finite entries instead of raising; callers
    that need a diagnosis re-evaluate the offending point with
    :func:`compile_scalar`.
    """
    index = {name: i for i, name in enumerate(variables)}

    def build(n):
        if isinstance(n, Num):
            value = n.value
            return lambda env: value
        if isinstance(n, Const):
            value = CONSTANTS[n.name]
            return lambda env: value
        if isinstance(n, Var):
            i = index[n.name]
            return lambda env: env[i]
        if isinstance(n, Neg):
            inner = build(n.operand)
            return lambda env: -inner(env)
        if isinstance(n, BinOp):
            a, b = build(n.left), build(n.right)
            op = {
                "+": np.add,
                "-": np.subtract,
                "*": np.multiply,
                "/": np.divide,
                "^": np.power,
            }[n.op]
            return lambda env: op(a(env), b(env))
        if isinstance(n, Call):
            fn = _ARRAY_FUNCS[n.func]
            parts = [build(arg) for arg in n.args]
            return lambda env: fn(*(p(env) for p in parts))
        raise TypeError(f"not an expression node: {n!r}")

    body = build(node)

    def f(*args):
        arrays = [np.asarray(a, dtype=float) for a in args]
        shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
        with np.errstate(all="ignore"):
            return np.broadcast_to(body(arrays), shape).astype(float)

    return f


def evaluate(node: ExprAst, bindings: Mapping[str, float]) -> float:
    """Evaluate ``node`` in double precision under ``bindings``."""
    names = sorted(free_variables(node))
    missing = [name for name in names if name not in bindings]
    if missing:
        raise KeyError(f"unbound variables: {missing}")
    return compile_scalar(node, names)(*(float(bindings[name]) for name in names))

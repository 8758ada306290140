"""Recursive-descent parser and evaluator for coefficient expressions.

This small language carries every formula the toolkit needs: drift and
diffusion coefficients f(x, y, t), g(x, y, t), h(t), initial segments
eta(u), variable delays delta(t) and Lyapunov candidates U(x, t).

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-'? power
    power  := atom ('^' power)?            # '^' is right-associative
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Variables are restricted to {x, y, t, u}.  Functions: exp, sin, cos, abs
(one argument) and pow, min, max (two arguments).  Unary minus binds looser
than '^', so "-x^2" means -(x^2).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

VARIABLES = ("x", "y", "t", "u")

_FUNCTION_ARITY = {
    "exp": 1,
    "sin": 1,
    "cos": 1,
    "abs": 1,
    "pow": 2,
    "min": 2,
    "max": 2,
}

DEFAULT_FD_STEP = 1e-5


class ExprError(Exception):
    """Base class for expression-language failures."""


class ParseError(ExprError):
    """Syntax error, with the byte offset and the token set expected there."""

    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = tuple(expected)
        detail = f"{message} at offset {offset}"
        if self.expected:
            detail += " (expected: " + ", ".join(self.expected) + ")"
        super().__init__(detail)


class UnknownIdentifier(ParseError):
    pass


class ArityMismatch(ParseError):
    pass


class UnboundVariable(ExprError):
    pass


class DomainError(ExprError):
    """Evaluation produced a non-finite value (overflow, 0-division, ...)."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<number>(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)
    | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "number" | "ident" | literal op | "eof"
    text: str
    offset: int


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        if m.lastgroup == "op":
            tokens.append(_Token(m.group(), m.group(), m.start()))
        else:
            tokens.append(_Token(m.lastgroup, m.group(), m.start()))
    tokens.append(_Token("eof", "", len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(f"unexpected {tok.kind or 'end'}", tok.offset, (kind,))
        return self.advance()

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError("trailing input", tok.offset, ("eof",))
        return e

    def expr(self):
        left = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.advance().kind
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.advance().kind
            left = BinOp(op, left, self.factor())
        return left

    def factor(self):
        if self.peek().kind == "-":
            self.advance()
            return Neg(self.power())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "^":
            self.advance()
            return BinOp("^", base, self.power())
        return base

    def atom(self):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if self.peek().kind == "(":
                return self.call(tok)
            if tok.text not in VARIABLES:
                raise UnknownIdentifier(
                    f"unknown identifier {tok.text!r}", tok.offset, VARIABLES
                )
            return Var(tok.text)
        if tok.kind == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        raise ParseError(
            f"unexpected {tok.kind or 'end'}", tok.offset, ("number", "identifier", "(")
        )

    def call(self, name_tok):
        name = name_tok.text
        if name not in _FUNCTION_ARITY:
            raise UnknownIdentifier(
                f"unknown function {name!r}", name_tok.offset, tuple(_FUNCTION_ARITY)
            )
        self.expect("(")
        args = [self.expr()]
        while self.peek().kind == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        arity = _FUNCTION_ARITY[name]
        if len(args) != arity:
            raise ArityMismatch(
                f"{name} takes {arity} argument(s), got {len(args)}", name_tok.offset
            )
        return Call(name, tuple(args))


def parse_expr(text):
    """Parse ``text`` into an AST.  Raises :class:`ParseError` on bad input."""
    return _Parser(_tokenize(text)).parse()


# ---------------------------------------------------------------------------
# Evaluation (scalar, IEEE double)

_MATH_FUNCS = {
    "exp": math.exp,
    "sin": math.sin,
    "cos": math.cos,
    "abs": abs,
    "pow": math.pow,
    "min": min,
    "max": max,
}


def eval_expr(expr, bindings):
    """Evaluate ``expr`` to a float with ``bindings`` mapping variable -> number.

    Raises :class:`UnboundVariable` for missing variables and
    :class:`DomainError` whenever evaluation leaves the finite doubles.
    """
    if isinstance(expr, Num):
        v = expr.value
        if not math.isfinite(v):
            raise DomainError(f"non-finite literal {v!r}")
        return v
    if isinstance(expr, Var):
        try:
            return float(bindings[expr.name])
        except KeyError:
            raise UnboundVariable(f"variable {expr.name!r} is not bound") from None
    if isinstance(expr, Neg):
        return -eval_expr(expr.operand, bindings)
    if isinstance(expr, BinOp):
        lv = eval_expr(expr.left, bindings)
        rv = eval_expr(expr.right, bindings)
        try:
            if expr.op == "+":
                v = lv + rv
            elif expr.op == "-":
                v = lv - rv
            elif expr.op == "*":
                v = lv * rv
            elif expr.op == "/":
                v = lv / rv
            else:
                v = math.pow(lv, rv)
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise DomainError(f"{expr.op} failed: {exc}") from None
        if not math.isfinite(v):
            raise DomainError(f"non-finite result of {expr.op}")
        return v
    if isinstance(expr, Call):
        args = [eval_expr(a, bindings) for a in expr.args]
        try:
            v = _MATH_FUNCS[expr.func](*args)
        except (OverflowError, ValueError) as exc:
            raise DomainError(f"{expr.func} failed: {exc}") from None
        if not math.isfinite(v):
            raise DomainError(f"non-finite result of {expr.func}")
        return v
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Evaluation (vectorized).  No finiteness policing here: grid sweeps inspect
# the result arrays themselves so they can report a witness point.

_NP_FUNCS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "pow": np.power,
    "min": np.minimum,
    "max": np.maximum,
}


def eval_expr_array(expr, bindings):
    """Evaluate with NumPy broadcasting; overflow/invalid pass through as inf/nan."""
    with np.errstate(all="ignore"):
        return _eval_array(expr, bindings)


def _eval_array(expr, bindings):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return bindings[expr.name]
        except KeyError:
            raise UnboundVariable(f"variable {expr.name!r} is not bound") from None
    if isinstance(expr, Neg):
        return -_eval_array(expr.operand, bindings)
    if isinstance(expr, BinOp):
        lv = _eval_array(expr.left, bindings)
        rv = _eval_array(expr.right, bindings)
        if expr.op == "+":
            return lv + rv
        if expr.op == "-":
            return lv - rv
        if expr.op == "*":
            return lv * rv
        if expr.op == "/":
            return np.divide(lv, rv)
        return np.power(lv, rv)
    if isinstance(expr, Call):
        args = [_eval_array(a, bindings) for a in expr.args]
        return _NP_FUNCS[expr.func](*args)
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Compilation to a plain Python function (hot loops).  Uses the same libm
# entry points as eval_expr, so compiled and interpreted results are
# bit-identical.

_COMPILE_ENV = {"__builtins__": {}, **_MATH_FUNCS}


def compile_expr(expr, params):
    """Compile to a Python function of ``params`` (tuple of variable names)."""
    extra = free_variables(expr) - set(params)
    if extra:
        raise UnboundVariable(
            f"expression uses {sorted(extra)} outside parameters {list(params)}"
        )
    src = "lambda {}: ({})".format(", ".join(params), _py_source(expr))
    return eval(src, dict(_COMPILE_ENV))


def _py_source(expr):
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        return f"(-({_py_source(expr.operand)}))"
    if isinstance(expr, BinOp):
        if expr.op == "^":
            return f"pow({_py_source(expr.left)}, {_py_source(expr.right)})"
        return f"({_py_source(expr.left)} {expr.op} {_py_source(expr.right)})"
    if isinstance(expr, Call):
        return "{}({})".format(expr.func, ", ".join(_py_source(a) for a in expr.args))
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Pretty printer.  Parenthesizes so that parse(format_expr(e)) == e.

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def format_expr(expr):
    return _fmt(expr, 0)


def _node_prec(expr):
    if isinstance(expr, Num):
        return _PREC_ATOM if expr.value >= 0 else _PREC_NEG
    if isinstance(expr, (Var, Call)):
        return _PREC_ATOM
    if isinstance(expr, Neg):
        return _PREC_NEG
    if expr.op in ("+", "-"):
        return _PREC_ADD
    if expr.op in ("*", "/"):
        return _PREC_MUL
    return _PREC_POW


def _fmt(expr, min_prec):
    if isinstance(expr, Num):
        s = repr(expr.value)
    elif isinstance(expr, Var):
        s = expr.name
    elif isinstance(expr, Neg):
        # the grammar only admits '-' in front of a power, so anything
        # looser must be parenthesized
        s = "-" + _fmt(expr.operand, _PREC_POW)
    elif isinstance(expr, Call):
        s = "{}({})".format(expr.func, ", ".join(_fmt(a, 0) for a in expr.args))
    elif expr.op == "^":
        s = _fmt(expr.left, _PREC_ATOM) + "^" + _fmt(expr.right, _PREC_POW)
    else:
        prec = _node_prec(expr)
        s = "{} {} {}".format(
            _fmt(expr.left, prec), expr.op, _fmt(expr.right, prec + 1)
        )
    return "(" + s + ")" if _node_prec(expr) < min_prec else s


# ---------------------------------------------------------------------------
# Numeric derivatives


def partial_derivative(expr, var, point, step=DEFAULT_FD_STEP, order=1):
    """Central finite difference of ``expr`` w.r.t. ``var`` at ``point``.

    order=1 uses the second-order central difference, order=2 the three-point
    stencil.  The step is ``step`` scaled by max(1, |point[var]|).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    try:
        x0 = float(point[var])
    except KeyError:
        raise UnboundVariable(f"variable {var!r} is not bound") from None
    h = step * max(1.0, abs(x0))
    up = eval_expr(expr, {**point, var: x0 + h})
    dn = eval_expr(expr, {**point, var: x0 - h})
    if order == 1:
        v = (up - dn) / (2.0 * h)
    else:
        mid = eval_expr(expr, point)
        v = (up - 2.0 * mid + dn) / (h * h)
    if not math.isfinite(v):
        raise DomainError(f"non-finite stencil for d^{order}/d{var}^{order}")
    return v


def free_variables(expr):
    """The set of variable names appearing in ``expr``."""
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Neg):
        return free_variables(expr.operand)
    if isinstance(expr, BinOp):
        return free_variables(expr.left) | free_variables(expr.right)
    if isinstance(expr, Call):
        out = set()
        for a in expr.args:
            out |= free_variables(a)
        return out
    raise TypeError(f"not an expression node: {expr!r}")

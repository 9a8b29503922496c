"""Expression language for fields, maps, guards, and event functions.

Everything dynamical in this package is carried by small closed-form
expressions over variables ``x0, x1, ...`` and named parameters: vector
fields, reset maps, smooth maps between modes, guard predicates, and the
scalar event functions that drive detection. This module owns the grammar,
the evaluator, forward-mode differentiation, and the compilation path used
by hot loops.

Grammar (expressions)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' atom)?
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')'
            | '(' expr ')' | '-' atom

Identifiers of the form ``x<digits>`` are variables; anything else is a
named parameter. Functions: sin, cos, exp, log, sqrt, abs, atan2.

Grammar (predicates)::

    pred := or-combination of 'and'-combinations of atoms
    atom := 'not' atom | '(' pred ')' | expr REL expr
    REL  := '<' | '<=' | '==' | '>=' | '>'

``==`` is only meaningful together with a tolerance at evaluation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Num", "Var", "Param", "Neg", "Bin", "Call",
    "Predicate", "Cmp", "And", "Or", "Not",
    "ExprError", "ExprSyntaxError", "EvalDomainError", "NondifferentiableError",
    "VectorExpr",
    "parse_expr", "parse_predicate", "parse_vector",
    "format_expr", "format_predicate",
    "eval_expr", "eval_predicate", "eval_dual", "jacobian",
    "substitute", "substitute_predicate", "derivative",
    "compile_expr", "compile_vector", "compile_predicate",
    "var_indices", "param_names", "predicate_param_names",
    "conj", "disj", "negate", "FUNCTIONS",
]


class ExprError(ValueError):
    """Base class for expression-layer failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str, pos: int):
        self.pos = pos
        snippet = text[max(0, pos - 12):pos + 12]
        super().__init__(f"{message} at column {pos + 1} (near {snippet!r})")


class EvalDomainError(ExprError):
    """Domain violation during evaluation (log of non-positive, etc.)."""


class NondifferentiableError(EvalDomainError):
    """Derivative requested at a point where it does not exist (abs at 0)."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Expr = Union[Num, Var, Param, Neg, Bin, Call]


@dataclass(frozen=True)
class Cmp:
    op: str  # one of < <= == >= >
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class And:
    lhs: "Predicate"
    rhs: "Predicate"


@dataclass(frozen=True)
class Or:
    lhs: "Predicate"
    rhs: "Predicate"


@dataclass(frozen=True)
class Not:
    arg: "Predicate"


Predicate = Union[Cmp, And, Or, Not]

# name -> arity
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1, "atan2": 2}
_KEYWORDS = {"and", "or", "not"}
_RELS = ("<=", "==", ">=", "<", ">")


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

class _Tok:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind, text, pos):
        self.kind = kind  # num | ident | op | end
        self.text = text
        self.pos = pos


def _tokenize(text: str) -> list:
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            toks.append(_Tok("num", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Tok("ident", text[i:j], i))
            i = j
            continue
        two = text[i:i + 2]
        if two in ("<=", ">=", "=="):
            toks.append(_Tok("op", two, i))
            i += 2
            continue
        if c in "+-*/^()<>,":
            toks.append(_Tok("op", c, i))
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", text, i)
    toks.append(_Tok("end", "", n))
    return toks


class _Parser:
    def __init__(self, text: str, dim):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.dim = dim

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.next()
        if t.text != text:
            raise ExprSyntaxError(f"expected {text!r}, found {t.text!r}", self.text, t.pos)
        return t

    def fail(self, msg: str):
        raise ExprSyntaxError(msg, self.text, self.peek().pos)

    # ---- expressions -----------------------------------------------------

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            node = Bin(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        node = self.atom()
        if self.peek().text == "^":
            self.next()
            node = Bin("^", node, self.atom())
        return node

    def atom(self) -> Expr:
        t = self.next()
        if t.kind == "num":
            return Num(float(t.text))
        if t.text == "-":
            return Neg(self.atom())
        if t.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if t.kind == "ident":
            name = t.text
            if self.peek().text == "(":
                if name not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {name!r}", self.text, t.pos)
                self.next()
                args = [self.expr()]
                while self.peek().text == ",":
                    self.next()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[name]:
                    raise ExprSyntaxError(
                        f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}",
                        self.text, t.pos)
                return Call(name, tuple(args))
            if name in FUNCTIONS:
                raise ExprSyntaxError(f"function name {name!r} used without arguments",
                                      self.text, t.pos)
            if name in _KEYWORDS:
                raise ExprSyntaxError(f"reserved word {name!r} in expression", self.text, t.pos)
            if name[0] == "x" and name[1:].isdigit():
                idx = int(name[1:])
                if self.dim is not None and idx >= self.dim:
                    raise ExprSyntaxError(
                        f"variable {name} exceeds dimension {self.dim}", self.text, t.pos)
                return Var(idx)
            return Param(name)
        raise ExprSyntaxError(f"unexpected token {t.text!r}", self.text, t.pos)

    # ---- predicates ------------------------------------------------------

    def pred(self) -> Predicate:
        node = self.pred_and()
        while self.peek().text == "or":
            self.next()
            node = Or(node, self.pred_and())
        return node

    def pred_and(self) -> Predicate:
        node = self.pred_atom()
        while self.peek().text == "and":
            self.next()
            node = And(node, self.pred_atom())
        return node

    def pred_atom(self) -> Predicate:
        t = self.peek()
        if t.text == "not":
            self.next()
            return Not(self.pred_atom())
        if t.text == "(":
            # Could open a parenthesized predicate or a comparison whose lhs
            # is parenthesized; try the predicate reading first, backtrack.
            save = self.i
            try:
                self.next()
                node = self.pred()
                self.expect(")")
                if self.peek().text in _RELS:
                    raise ExprSyntaxError("comparison of predicates", self.text, t.pos)
                return node
            except ExprSyntaxError:
                self.i = save
        return self.cmp()

    def cmp(self) -> Cmp:
        lhs = self.expr()
        t = self.next()
        if t.text not in _RELS:
            raise ExprSyntaxError(f"expected comparison operator, found {t.text!r}",
                                  self.text, t.pos)
        rhs = self.expr()
        return Cmp(t.text, lhs, rhs)


def parse_expr(text: str, dim=None) -> Expr:
    """Parse a scalar expression; ``dim`` bounds usable variable indices."""
    p = _Parser(text, dim)
    node = p.expr()
    if p.peek().kind != "end":
        p.fail(f"trailing input {p.peek().text!r}")
    return node


def parse_predicate(text: str, dim=None) -> Predicate:
    p = _Parser(text, dim)
    node = p.pred()
    if p.peek().kind != "end":
        p.fail(f"trailing input {p.peek().text!r}")
    return node


def parse_vector(texts: Sequence[str], dim=None) -> "VectorExpr":
    return VectorExpr(dim, tuple(parse_expr(t, dim) for t in texts))


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def _fmt_num(v: float) -> str:
    if not math.isfinite(v):
        raise ExprError(f"cannot format non-finite literal {v!r}")
    if v < 0:
        # Prints like a negation; reparses as Neg(Num(-v)). Builders that
        # care about structural round-trips use Neg explicitly.
        return "-" + _fmt_num(-v)
    if v == int(v) and abs(v) < 1e16:
        return repr(v) if repr(v).endswith(".0") else repr(v)
    return repr(v)


def _atomize(e: Expr) -> str:
    s = format_expr(e)
    if isinstance(e, (Num, Var, Param, Call, Neg)) and not (isinstance(e, Num) and e.value < 0):
        return s
    return "(" + s + ")"


def format_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Neg):
        return "-" + _atomize(e.arg)
    if isinstance(e, Call):
        return e.fn + "(" + ", ".join(format_expr(a) for a in e.args) + ")"
    if isinstance(e, Bin):
        if e.op == "^":
            return _atomize(e.lhs) + "^" + _atomize(e.rhs)
        if e.op in "+-":
            lhs = format_expr(e.lhs)
            rhs = format_expr(e.rhs)
            if isinstance(e.rhs, Bin) and e.rhs.op in "+-":
                rhs = "(" + rhs + ")"
            return f"{lhs} {e.op} {rhs}"
        # * or /
        def side(sub, is_rhs):
            s = format_expr(sub)
            if isinstance(sub, Bin) and sub.op in "+-":
                return "(" + s + ")"
            if is_rhs and isinstance(sub, Bin) and sub.op in "*/":
                return "(" + s + ")"
            return s
        return f"{side(e.lhs, False)} {e.op} {side(e.rhs, True)}"
    raise TypeError(f"not an expression node: {e!r}")


def format_predicate(p: Predicate) -> str:
    if isinstance(p, Cmp):
        return f"{format_expr(p.lhs)} {p.op} {format_expr(p.rhs)}"
    if isinstance(p, And):
        def side(q):
            s = format_predicate(q)
            return "(" + s + ")" if isinstance(q, Or) else s
        return f"{side(p.lhs)} and {side(p.rhs)}"
    if isinstance(p, Or):
        return f"{format_predicate(p.lhs)} or {format_predicate(p.rhs)}"
    if isinstance(p, Not):
        s = format_predicate(p.arg)
        if isinstance(p.arg, (And, Or)):
            s = "(" + s + ")"
        return "not " + s
    raise TypeError(f"not a predicate node: {p!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _pow(a: float, b: float, where: str) -> float:
    if b == int(b):
        if a == 0.0 and b < 0:
            raise EvalDomainError(f"zero raised to negative power in {where}")
        return a ** b
    if a < 0:
        raise EvalDomainError(f"negative base with non-integer exponent in {where}")
    if a == 0.0 and b < 0:
        raise EvalDomainError(f"zero raised to negative power in {where}")
    return a ** b


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def eval_expr(e: Expr, x, params: Mapping[str, float]) -> float:
    """Tree-walk evaluation in IEEE doubles; domain errors are raised."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return float(x[e.index])
    if isinstance(e, Param):
        try:
            return float(params[e.name])
        except KeyError:
            raise ExprError(f"unbound parameter {e.name!r}") from None
    if isinstance(e, Neg):
        return -eval_expr(e.arg, x, params)
    if isinstance(e, Bin):
        a = eval_expr(e.lhs, x, params)
        b = eval_expr(e.rhs, x, params)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise EvalDomainError(f"division by zero in {format_expr(e)!r}")
            return a / b
        return _pow(a, b, repr(format_expr(e)))
    if isinstance(e, Call):
        args = [eval_expr(a, x, params) for a in e.args]
        return _call(e.fn, args, e)
    raise TypeError(f"not an expression node: {e!r}")


def _call(fn: str, args, e) -> float:
    a = args[0]
    if fn == "sin":
        return math.sin(a)
    if fn == "cos":
        return math.cos(a)
    if fn == "exp":
        return _exp(a)
    if fn == "log":
        if a <= 0:
            raise EvalDomainError(f"log of non-positive value in {format_expr(e)!r}")
        return math.log(a)
    if fn == "sqrt":
        if a < 0:
            raise EvalDomainError(f"sqrt of negative value in {format_expr(e)!r}")
        return math.sqrt(a)
    if fn == "abs":
        return abs(a)
    if fn == "atan2":
        return math.atan2(a, args[1])
    raise ExprError(f"unknown function {fn!r}")


def eval_predicate(p: Predicate, x, params: Mapping[str, float], eq_tol: float) -> bool:
    """Evaluate a predicate; ``==`` means within ``eq_tol``, the rest exact."""
    if isinstance(p, Cmp):
        a = eval_expr(p.lhs, x, params)
        b = eval_expr(p.rhs, x, params)
        if p.op == "<":
            return a < b
        if p.op == "<=":
            return a <= b
        if p.op == "==":
            return abs(a - b) <= eq_tol
        if p.op == ">=":
            return a >= b
        return a > b
    if isinstance(p, And):
        return eval_predicate(p.lhs, x, params, eq_tol) and eval_predicate(p.rhs, x, params, eq_tol)
    if isinstance(p, Or):
        return eval_predicate(p.lhs, x, params, eq_tol) or eval_predicate(p.rhs, x, params, eq_tol)
    if isinstance(p, Not):
        return not eval_predicate(p.arg, x, params, eq_tol)
    raise TypeError(f"not a predicate node: {p!r}")


# ---------------------------------------------------------------------------
# Forward-mode differentiation
# ---------------------------------------------------------------------------

def eval_dual(e: Expr, x, params: Mapping[str, float], dim: int):
    """Evaluate ``e`` with first derivatives; returns (value, gradient).

    Exact forward-mode propagation, one pass carrying the whole gradient.
    Raises NondifferentiableError at abs(0) and friends.
    """
    if isinstance(e, Num):
        return e.value, np.zeros(dim)
    if isinstance(e, Var):
        g = np.zeros(dim)
        g[e.index] = 1.0
        return float(x[e.index]), g
    if isinstance(e, Param):
        try:
            return float(params[e.name]), np.zeros(dim)
        except KeyError:
            raise ExprError(f"unbound parameter {e.name!r}") from None
    if isinstance(e, Neg):
        v, g = eval_dual(e.arg, x, params, dim)
        return -v, -g
    if isinstance(e, Bin):
        av, ag = eval_dual(e.lhs, x, params, dim)
        bv, bg = eval_dual(e.rhs, x, params, dim)
        if e.op == "+":
            return av + bv, ag + bg
        if e.op == "-":
            return av - bv, ag - bg
        if e.op == "*":
            return av * bv, av * bg + bv * ag
        if e.op == "/":
            if bv == 0.0:
                raise EvalDomainError(f"division by zero in {format_expr(e)!r}")
            return av / bv, (ag * bv - av * bg) / (bv * bv)
        # power
        v = _pow(av, bv, repr(format_expr(e)))
        if not bg.any():
            # constant exponent: d(u^c) = c u^(c-1) u'
            if bv == 0:
                return v, np.zeros(dim)
            if av == 0.0 and bv < 1:
                raise NondifferentiableError(
                    f"derivative of {format_expr(e)!r} undefined at zero base")
            dv = bv * _pow(av, bv - 1.0, repr(format_expr(e))) * ag
            return v, dv
        if av <= 0:
            raise EvalDomainError(
                f"derivative of {format_expr(e)!r} needs positive base for varying exponent")
        return v, v * (bg * math.log(av) + bv * ag / av)
    if isinstance(e, Call):
        if e.fn == "atan2":
            yv, yg = eval_dual(e.args[0], x, params, dim)
            xv, xg = eval_dual(e.args[1], x, params, dim)
            den = yv * yv + xv * xv
            if den == 0.0:
                raise NondifferentiableError("atan2 derivative undefined at the origin")
            return math.atan2(yv, xv), (xv * yg - yv * xg) / den
        v, g = eval_dual(e.args[0], x, params, dim)
        if e.fn == "sin":
            return math.sin(v), math.cos(v) * g
        if e.fn == "cos":
            return math.cos(v), -math.sin(v) * g
        if e.fn == "exp":
            w = _exp(v)
            return w, w * g
        if e.fn == "log":
            if v <= 0:
                raise EvalDomainError(f"log of non-positive value in {format_expr(e)!r}")
            return math.log(v), g / v
        if e.fn == "sqrt":
            if v < 0:
                raise EvalDomainError(f"sqrt of negative value in {format_expr(e)!r}")
            if v == 0:
                raise NondifferentiableError(f"sqrt derivative undefined at 0 in {format_expr(e)!r}")
            w = math.sqrt(v)
            return w, g / (2.0 * w)
        if e.fn == "abs":
            if v == 0:
                raise NondifferentiableError(f"abs derivative undefined at 0 in {format_expr(e)!r}")
            return abs(v), math.copysign(1.0, v) * g
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Symbolic utilities (substitution; derivative used by constructors)
# ---------------------------------------------------------------------------

def substitute(e: Expr, subs: Sequence[Expr]) -> Expr:
    """Replace each variable x_i by subs[i] (composition of maps)."""
    if isinstance(e, (Num, Param)):
        return e
    if isinstance(e, Var):
        if e.index >= len(subs):
            raise ExprError(f"substitute: no replacement for x{e.index}")
        return subs[e.index]
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, subs))
    if isinstance(e, Bin):
        return Bin(e.op, substitute(e.lhs, subs), substitute(e.rhs, subs))
    if isinstance(e, Call):
        return Call(e.fn, tuple(substitute(a, subs) for a in e.args))
    raise TypeError(f"not an expression node: {e!r}")


def substitute_predicate(p: Predicate, subs: Sequence[Expr]) -> Predicate:
    if isinstance(p, Cmp):
        return Cmp(p.op, substitute(p.lhs, subs), substitute(p.rhs, subs))
    if isinstance(p, And):
        return And(substitute_predicate(p.lhs, subs), substitute_predicate(p.rhs, subs))
    if isinstance(p, Or):
        return Or(substitute_predicate(p.lhs, subs), substitute_predicate(p.rhs, subs))
    if isinstance(p, Not):
        return Not(substitute_predicate(p.arg, subs))
    raise TypeError(f"not a predicate node: {p!r}")


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Num) and e.value == 0.0


def _is_one(e: Expr) -> bool:
    return isinstance(e, Num) and e.value == 1.0


def _add(a: Expr, b: Expr) -> Expr:
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return Bin("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_zero(b):
        return a
    if _is_zero(a):
        return Neg(b)
    return Bin("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_zero(a) or _is_zero(b):
        return Num(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return Bin("*", a, b)


def derivative(e: Expr, i: int) -> Expr:
    """Symbolic partial derivative d e / d x_i.

    Used only where a derivative is needed as an expression (transversality
    predicates built by constructors); numeric differentiation goes through
    eval_dual. Rejects abs, whose derivative is not an expression here.
    """
    if isinstance(e, (Num, Param)):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0) if e.index == i else Num(0.0)
    if isinstance(e, Neg):
        d = derivative(e.arg, i)
        return Num(0.0) if _is_zero(d) else Neg(d)
    if isinstance(e, Bin):
        da, db = derivative(e.lhs, i), derivative(e.rhs, i)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, e.rhs), _mul(e.lhs, db))
        if e.op == "/":
            num = _sub(_mul(da, e.rhs), _mul(e.lhs, db))
            return Bin("/", num, Bin("^", e.rhs, Num(2.0))) if not _is_zero(num) else Num(0.0)
        # power: support constant exponents, the only case constructors need
        if not _is_zero(db):
            raise ExprError("symbolic derivative of non-constant exponent unsupported")
        if isinstance(e.rhs, Num):
            c = e.rhs.value
            if c == 0:
                return Num(0.0)
            down = e.lhs if c == 2.0 else Bin("^", e.lhs, Num(c - 1.0))
            return _mul(_mul(Num(c), down), da) if not _is_zero(da) else Num(0.0)
        raise ExprError("symbolic derivative of parameterized exponent unsupported")
    if isinstance(e, Call):
        if e.fn == "abs":
            raise ExprError("symbolic derivative of abs unsupported")
        if e.fn == "atan2":
            y, x_ = e.args
            dy, dx = derivative(y, i), derivative(x_, i)
            den = _add(Bin("^", y, Num(2.0)), Bin("^", x_, Num(2.0)))
            num = _sub(_mul(x_, dy), _mul(y, dx))
            return Bin("/", num, den) if not _is_zero(num) else Num(0.0)
        d = derivative(e.args[0], i)
        if _is_zero(d):
            return Num(0.0)
        u = e.args[0]
        if e.fn == "sin":
            return _mul(Call("cos", (u,)), d)
        if e.fn == "cos":
            return Neg(_mul(Call("sin", (u,)), d))
        if e.fn == "exp":
            return _mul(Call("exp", (u,)), d)
        if e.fn == "log":
            return Bin("/", d, u)
        if e.fn == "sqrt":
            return Bin("/", d, _mul(Num(2.0), Call("sqrt", (u,))))
    raise TypeError(f"not an expression node: {e!r}")


def var_indices(e: Expr) -> set:
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, (Num, Param)):
        return set()
    if isinstance(e, Neg):
        return var_indices(e.arg)
    if isinstance(e, Bin):
        return var_indices(e.lhs) | var_indices(e.rhs)
    if isinstance(e, Call):
        out = set()
        for a in e.args:
            out |= var_indices(a)
        return out
    raise TypeError(f"not an expression node: {e!r}")


def param_names(e: Expr) -> set:
    if isinstance(e, Param):
        return {e.name}
    if isinstance(e, (Num, Var)):
        return set()
    if isinstance(e, Neg):
        return param_names(e.arg)
    if isinstance(e, Bin):
        return param_names(e.lhs) | param_names(e.rhs)
    if isinstance(e, Call):
        out = set()
        for a in e.args:
            out |= param_names(a)
        return out
    raise TypeError(f"not an expression node: {e!r}")


def predicate_param_names(p: Predicate) -> set:
    if isinstance(p, Cmp):
        return param_names(p.lhs) | param_names(p.rhs)
    if isinstance(p, (And, Or)):
        return predicate_param_names(p.lhs) | predicate_param_names(p.rhs)
    if isinstance(p, Not):
        return predicate_param_names(p.arg)
    raise TypeError(f"not a predicate node: {p!r}")


def conj(a: Predicate, b: Predicate) -> Predicate:
    return And(a, b)


def disj(a: Predicate, b: Predicate) -> Predicate:
    return Or(a, b)


def negate(p: Predicate) -> Predicate:
    return p.arg if isinstance(p, Not) else Not(p)


# ---------------------------------------------------------------------------
# Compilation (hot paths; semantics match the tree-walkers)
# ---------------------------------------------------------------------------

def _gen(e: Expr, params: Mapping[str, float]) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return f"x[{e.index}]"
    if isinstance(e, Param):
        try:
            return repr(float(params[e.name]))
        except KeyError:
            raise ExprError(f"unbound parameter {e.name!r}") from None
    if isinstance(e, Neg):
        return f"(-{_gen(e.arg, params)})"
    if isinstance(e, Bin):
        a, b = _gen(e.lhs, params), _gen(e.rhs, params)
        if e.op == "^":
            if isinstance(e.rhs, Num) and e.rhs.value == int(e.rhs.value) and e.rhs.value >= 0:
                return f"({a}**{int(e.rhs.value)})"
            return f"_pow({a}, {b})"
        if e.op == "/":
            return f"_div({a}, {b})"
        return f"({a} {e.op} {b})"
    if isinstance(e, Call):
        args = ", ".join(_gen(a, params) for a in e.args)
        return f"_{e.fn}({args})"
    raise TypeError(f"not an expression node: {e!r}")


def _div_rt(a, b):
    if b == 0.0:
        raise EvalDomainError("division by zero")
    return a / b


def _pow_rt(a, b):
    return _pow(a, b, "compiled expression")


def _log_rt(a):
    if a <= 0:
        raise EvalDomainError("log of non-positive value")
    return math.log(a)


def _sqrt_rt(a):
    if a < 0:
        raise EvalDomainError("sqrt of negative value")
    return math.sqrt(a)


_COMPILE_ENV = {
    "_sin": math.sin, "_cos": math.cos, "_exp": _exp, "_log": _log_rt,
    "_sqrt": _sqrt_rt, "_abs": abs, "_atan2": math.atan2,
    "_pow": _pow_rt, "_div": _div_rt,
}


def compile_expr(e: Expr, params: Mapping[str, float]) -> Callable:
    """Compile to a fast ``f(x) -> float`` with parameters folded in."""
    src = "lambda x: " + _gen(e, params)
    return eval(src, dict(_COMPILE_ENV))  # namespace contains only math shims


def compile_predicate(p: Predicate, params: Mapping[str, float]) -> Callable:
    """Compile to ``f(x, eq_tol) -> bool``."""
    def gen(q: Predicate) -> str:
        if isinstance(q, Cmp):
            a, b = _gen(q.lhs, params), _gen(q.rhs, params)
            if q.op == "==":
                return f"(abs(({a}) - ({b})) <= eq_tol)"
            return f"(({a}) {q.op} ({b}))"
        if isinstance(q, And):
            return f"({gen(q.lhs)} and {gen(q.rhs)})"
        if isinstance(q, Or):
            return f"({gen(q.lhs)} or {gen(q.rhs)})"
        if isinstance(q, Not):
            return f"(not {gen(q.arg)})"
        raise TypeError(f"not a predicate node: {q!r}")

    src = "lambda x, eq_tol: " + gen(p)
    return eval(src, dict(_COMPILE_ENV))


# ---------------------------------------------------------------------------
# Vectors of expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorExpr:
    """A map R^dim_in -> R^len(components), each component an Expr."""

    dim_in: int
    components: tuple

    def __post_init__(self):
        for c in self.components:
            bad = [i for i in var_indices(c) if self.dim_in is not None and i >= self.dim_in]
            if bad:
                raise ExprError(f"component {format_expr(c)!r} uses x{bad[0]} "
                                f"beyond dim_in={self.dim_in}")

    @property
    def dim_out(self) -> int:
        return len(self.components)

    def __call__(self, x, params: Mapping[str, float]) -> np.ndarray:
        return np.array([eval_expr(c, x, params) for c in self.components], dtype=float)

    def jacobian(self, x, params: Mapping[str, float]) -> np.ndarray:
        rows = [eval_dual(c, x, params, self.dim_in)[1] for c in self.components]
        if not rows:
            return np.zeros((0, self.dim_in))
        return np.vstack(rows)

    def compiled(self, params: Mapping[str, float]) -> Callable:
        fns = [compile_expr(c, params) for c in self.components]
        if not fns:
            empty = np.zeros(0)
            return lambda x: empty
        def f(x, _fns=tuple(fns)):
            return np.array([g(x) for g in _fns], dtype=float)
        return f

    def compose(self, inner: "VectorExpr") -> "VectorExpr":
        """self after inner: substitute inner's components for variables."""
        if inner.dim_out != self.dim_in:
            raise ExprError(f"compose: inner produces {inner.dim_out} values, "
                            f"outer consumes {self.dim_in}")
        comps = tuple(substitute(c, inner.components) for c in self.components)
        return VectorExpr(inner.dim_in, comps)

    def format(self) -> list:
        return [format_expr(c) for c in self.components]


def jacobian(v: VectorExpr, x, params: Mapping[str, float]) -> np.ndarray:
    """Exact forward-mode Jacobian of a VectorExpr at x (dim_out x dim_in)."""
    return v.jacobian(x, params)


def identity_vector(dim: int) -> VectorExpr:
    return VectorExpr(dim, tuple(Var(i) for i in range(dim)))


def constant_vector(values: Sequence[float], dim_in: int) -> VectorExpr:
    comps = []
    for v in values:
        comps.append(Neg(Num(-float(v))) if v < 0 else Num(float(v)))
    return VectorExpr(dim_in, tuple(comps))

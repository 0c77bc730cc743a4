"""Scalar fields over coordinates ``x1..xn``: parsing, evaluation, exact derivatives.

Expressions are immutable, structurally hashed trees. Constructors apply a
little local simplification (constant folding, ``0*a -> 0``, ``1*a -> a`` and
friends) so derivative trees stay small. Evaluation goes through a flat tape
(see :mod:`nambu._fallback` for its layout) run by the compiled kernel when it
is available.

Coordinates are 1-based in text (``x1``) and 0-based everywhere in the API.
"""
from __future__ import annotations

import math
import re
from typing import Iterable, Sequence

import numpy as np

from nambu import _backend
from nambu._fallback import (
    OP_ADD, OP_CONST, OP_COS, OP_DIV, OP_EXP, OP_LOG, OP_MUL, OP_NEG, OP_POW,
    OP_POWI, OP_SIN, OP_SQRT, OP_SUB, OP_VAR,
)

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ParseError(ValueError):
    """Raised for malformed expression text; ``offset`` is the byte offset."""

    def __init__(self, message: str, text: str = "", pos: int = 0):
        self.offset = len(text[:pos].encode("utf-8"))
        super().__init__(f"{message} (at byte {self.offset})")


class DomainError(ArithmeticError):
    """An expression was evaluated outside its domain (log(0), 1/0, ...)."""

    def __init__(self, message: str, point=None):
        self.point = None if point is None else [float(v) for v in point]
        if point is not None:
            message = f"{message} at x={self.point}"
        super().__init__(message)


_STATUS = {
    1: "division by zero",
    2: "log of non-positive value",
    3: "sqrt of negative value",
    4: "negative base raised to non-integer power",
    5: "zero raised to negative power",
}


# --------------------------------------------------------------------------
# expression nodes


class Expr:
    __slots__ = ("op", "args", "value", "_hash")

    def __init__(self, op: str, args: tuple = (), value=None):
        self.op = op
        self.args = args
        self.value = value
        self._hash = hash((op, value, tuple(a._hash for a in args)))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr) or self._hash != other._hash:
            return False
        return self.op == other.op and self.value == other.value and self.args == other.args

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    @property
    def is_const(self) -> bool:
        return self.op == "const"


ZERO = Expr("const", (), 0.0)
ONE = Expr("const", (), 1.0)


def const(v: float) -> Expr:
    v = float(v)
    if v == 0.0:
        return ZERO  # also normalises -0.0
    if v == 1.0:
        return ONE
    return Expr("const", (), v)


def var(i: int) -> Expr:
    return Expr("var", (), int(i))


def _finite_const(v):
    return const(v) if math.isfinite(v) else None


def add(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value + b.value)
    if a is ZERO or (a.is_const and a.value == 0.0):
        return b
    if b.is_const and b.value == 0.0:
        return a
    return Expr("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value - b.value)
    if b.is_const and b.value == 0.0:
        return a
    if a.is_const and a.value == 0.0:
        return neg(b)
    if a == b:
        return ZERO
    return Expr("sub", (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value * b.value)
    for p, q in ((a, b), (b, a)):
        if p.is_const:
            if p.value == 0.0:
                return ZERO
            if p.value == 1.0:
                return q
            if p.value == -1.0:
                return neg(q)
    return Expr("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if b.is_const:
        if b.value == 1.0:
            return a
        if b.value != 0.0 and a.is_const:
            return const(a.value / b.value)
    return Expr("div", (a, b))


def neg(a: Expr) -> Expr:
    if a.is_const:
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    return Expr("neg", (a,))


def power(a: Expr, b: Expr) -> Expr:
    if b.is_const:
        if b.value == 0.0:
            return ONE
        if b.value == 1.0:
            return a
        if a.is_const:
            u, v = a.value, b.value
            if not (u < 0 and v != math.floor(v)) and not (u == 0 and v < 0):
                try:
                    folded = _finite_const(math.pow(u, v))
                except (OverflowError, ValueError):
                    folded = None
                if folded is not None:
                    return folded
    return Expr("pow", (a, b))


_FOLD = {
    "sin": (math.sin, lambda u: True),
    "cos": (math.cos, lambda u: True),
    "exp": (math.exp, lambda u: u < 700.0),
    "log": (math.log, lambda u: u > 0.0),
    "sqrt": (math.sqrt, lambda u: u >= 0.0),
}


def func(name: str, a: Expr) -> Expr:
    if name not in _FOLD:
        raise ValueError(f"unknown function {name!r}")
    if a.is_const:
        f, ok = _FOLD[name]
        if ok(a.value):
            folded = _finite_const(f(a.value))
            if folded is not None:
                return folded
    return Expr(name, (a,))


def sum_exprs(terms: Iterable[Expr]) -> Expr:
    """Sum as a balanced tree, keeping depth logarithmic in the term count."""
    items = [t for t in terms if not (t.is_const and t.value == 0.0)]
    if not items:
        return ZERO
    while len(items) > 1:
        nxt = [add(items[k], items[k + 1]) for k in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def prod_exprs(factors: Iterable[Expr]) -> Expr:
    out = ONE
    for f in factors:
        out = mul(out, f)
    return out


# --------------------------------------------------------------------------
# derivative


def derivative(e: Expr, i: int, memo: dict | None = None) -> Expr:
    """Exact partial derivative of ``e`` with respect to coordinate ``i`` (0-based)."""
    if memo is None:
        memo = {}
    hit = memo.get(e)
    if hit is not None:
        return hit
    op = e.op
    if op == "const":
        d = ZERO
    elif op == "var":
        d = ONE if e.value == i else ZERO
    elif op in ("add", "sub"):
        da = derivative(e.args[0], i, memo)
        db = derivative(e.args[1], i, memo)
        d = add(da, db) if op == "add" else sub(da, db)
    elif op == "mul":
        a, b = e.args
        d = add(mul(derivative(a, i, memo), b), mul(a, derivative(b, i, memo)))
    elif op == "div":
        a, b = e.args
        da, db = derivative(a, i, memo), derivative(b, i, memo)
        if db is ZERO:
            d = div(da, b)
        else:
            d = div(sub(mul(da, b), mul(a, db)), power(b, const(2.0)))
    elif op == "neg":
        d = neg(derivative(e.args[0], i, memo))
    elif op == "pow":
        a, b = e.args
        da = derivative(a, i, memo)
        if b.is_const and b.value == math.floor(b.value):
            d = mul(mul(b, power(a, const(b.value - 1.0))), da)
        else:
            # a^b = exp(b log a)  =>  d(a^b) = a^b (b' log a + b a'/a)
            db = derivative(b, i, memo)
            inner = add(mul(db, func("log", a)) if db is not ZERO else ZERO,
                        div(mul(b, da), a) if da is not ZERO else ZERO)
            d = mul(e, inner)
    elif op == "sin":
        a = e.args[0]
        d = mul(func("cos", a), derivative(a, i, memo))
    elif op == "cos":
        a = e.args[0]
        d = neg(mul(func("sin", a), derivative(a, i, memo)))
    elif op == "exp":
        d = mul(e, derivative(e.args[0], i, memo))
    elif op == "log":
        a = e.args[0]
        d = div(derivative(a, i, memo), a)
    elif op == "sqrt":
        a = e.args[0]
        d = div(derivative(a, i, memo), mul(const(2.0), e))
    else:  # pragma: no cover
        raise ValueError(f"unknown node {op}")
    memo[e] = d
    return d


def free_vars(e: Expr) -> set[int]:
    seen, out, stack = set(), set(), [e]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if node.op == "var":
            out.add(node.value)
        stack.extend(node.args)
    return out


# --------------------------------------------------------------------------
# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _prec(e: Expr) -> int:
    return _PREC.get(e.op, 5)


def to_string(e: Expr) -> str:
    """Render ``e`` so that parsing the text rebuilds the same tree."""

    def wrap(sub_e, need):
        s = to_string(sub_e)
        return f"({s})" if _prec(sub_e) < need else s

    op = e.op
    if op == "const":
        return repr(e.value) if e.value >= 0 else f"({e.value!r})"
    if op == "var":
        return f"x{e.value + 1}"
    if op in ("add", "sub"):
        sym = " + " if op == "add" else " - "
        return wrap(e.args[0], 1) + sym + wrap(e.args[1], 2)
    if op in ("mul", "div"):
        sym = "*" if op == "mul" else "/"
        return wrap(e.args[0], 2) + sym + wrap(e.args[1], 3)
    if op == "neg":
        return "-" + wrap(e.args[0], 3)
    if op == "pow":
        return wrap(e.args[0], 5) + "^" + wrap(e.args[1], 3)
    return f"{op}({to_string(e.args[0])})"


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_VAR = re.compile(r"x(\d+)$")


def _tokenize(text: str):
    pos, toks = 0, []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    # expr   := term (('+'|'-') term)*
    # term   := factor (('*'|'/') factor)*
    # factor := '-' factor | power
    # power  := atom ('^' factor)?
    # atom   := number | var | func '(' expr ')' | '(' expr ')'

    def __init__(self, text: str, n: int):
        self.text = text
        self.n = n
        self.toks = _tokenize(text)
        self.k = 0

    def peek(self):
        return self.toks[self.k]

    def take(self):
        tok = self.toks[self.k]
        self.k += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ParseError(f"expected {value!r}, found {what}", self.text, tok[2])

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected token {tok[1]!r}", self.text, tok[2])
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def factor(self):
        if self.peek()[1] == "-":
            self.take()
            return neg(self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return power(base, self.factor())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "ident":
            m = _VAR.match(val)
            if m:
                idx = int(m.group(1))
                if idx < 1 or idx > self.n:
                    raise ParseError(
                        f"variable {val} out of range for dimension {self.n}", self.text, pos)
                return var(idx - 1)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return func(val, arg)
            raise ParseError(f"unknown identifier {val!r}", self.text, pos)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", self.text, pos)


# --------------------------------------------------------------------------
# tape compilation

_OPCODE = {
    "add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV, "neg": OP_NEG,
    "sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "log": OP_LOG, "sqrt": OP_SQRT,
}


class Tape:
    """Several expressions compiled into one instruction stream (shared nodes merged)."""

    def __init__(self, exprs: Sequence[Expr], n: int):
        self.n = n
        slots: dict[Expr, int] = {}
        ops: list[int] = []
        aa: list[int] = []
        bb: list[int] = []
        cc: list[float] = []

        def emit(op, a=0, b=0, c=0.0):
            ops.append(op)
            aa.append(a)
            bb.append(b)
            cc.append(c)
            return len(ops) - 1

        outs = []
        for root in exprs:
            stack = [(root, False)]
            while stack:
                node, ready = stack.pop()
                if node in slots:
                    continue
                if not ready:
                    stack.append((node, True))
                    stack.extend((ch, False) for ch in node.args if ch not in slots)
                    continue
                op = node.op
                if op == "const":
                    s = emit(OP_CONST, c=node.value)
                elif op == "var":
                    if not 0 <= node.value < n:
                        raise ValueError(f"x{node.value + 1} out of range for dimension {n}")
                    s = emit(OP_VAR, a=node.value)
                elif op == "pow":
                    base, ex = node.args
                    if ex.is_const and ex.value == math.floor(ex.value) and abs(ex.value) < 2**31:
                        s = emit(OP_POWI, slots[base], int(ex.value))
                    else:
                        s = emit(OP_POW, slots[base], slots[ex])
                elif len(node.args) == 2:
                    s = emit(_OPCODE[op], slots[node.args[0]], slots[node.args[1]])
                else:
                    s = emit(_OPCODE[op], slots[node.args[0]])
                slots[node] = s
            outs.append(slots[root])
        self.ops = np.asarray(ops, dtype=np.int32)
        self.a = np.asarray(aa, dtype=np.int32)
        self.b = np.asarray(bb, dtype=np.int32)
        self.c = np.asarray(cc, dtype=np.float64)
        self.outs = np.asarray(outs, dtype=np.int32)

    def __len__(self):
        return len(self.ops)

    def _fail(self, code, point):
        status = code % 16
        raise DomainError(_STATUS.get(status, "evaluation error"), point)

    def eval(self, x, impl=None) -> np.ndarray:
        impl = impl or _backend
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"expected a point of dimension {self.n}, got shape {x.shape}")
        out = np.empty(len(self.outs))
        if len(self.ops) == 0:
            return out
        code = impl.eval_point(self.ops, self.a, self.b, self.c, self.outs, x, out)
        if code:
            self._fail(code, x)
        return out

    def eval_batch(self, X, impl=None) -> np.ndarray:
        impl = impl or _backend
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.n:
            raise ValueError(f"expected points of dimension {self.n}, got shape {X.shape}")
        out = np.empty((X.shape[0], len(self.outs)))
        if len(self.ops) == 0 or X.shape[0] == 0:
            return out
        code, row = impl.eval_batch(self.ops, self.a, self.b, self.c, self.outs, X, out)
        if code:
            self._fail(code, X[row])
        return out


def compile_fields(fields: Sequence["ScalarField | Expr"], n: int) -> Tape:
    return Tape([f.expr if isinstance(f, ScalarField) else f for f in fields], n)


# --------------------------------------------------------------------------
# public field type


class ScalarField:
    """A smooth scalar field on R^n given by a closed-form expression."""

    __slots__ = ("expr", "dim", "_tape", "_memo")

    def __init__(self, expr: Expr, dim: int):
        bad = [i for i in free_vars(expr) if not 0 <= i < dim]
        if bad:
            raise ValueError(f"x{max(bad) + 1} out of range for dimension {dim}")
        self.expr = expr
        self.dim = dim
        self._tape = None
        self._memo = {}

    @classmethod
    def coordinate(cls, i: int, dim: int) -> "ScalarField":
        return cls(var(i), dim)

    @classmethod
    def constant(cls, value: float, dim: int) -> "ScalarField":
        return cls(const(value), dim)

    def __str__(self):
        return to_string(self.expr)

    def __repr__(self):
        return f"ScalarField({to_string(self.expr)!r}, dim={self.dim})"

    @property
    def is_constant(self) -> bool:
        return self.expr.is_const

    @property
    def tape(self) -> Tape:
        if self._tape is None:
            self._tape = Tape([self.expr], self.dim)
        return self._tape

    def eval(self, x) -> float:
        return float(self.tape.eval(x)[0])

    __call__ = eval

    def eval_many(self, X) -> np.ndarray:
        return self.tape.eval_batch(X)[:, 0]

    def diff(self, i: int) -> "ScalarField":
        if not 0 <= i < self.dim:
            raise IndexError(f"coordinate {i} out of range for dimension {self.dim}")
        d = self._memo.get(i)
        if d is None:
            d = ScalarField(derivative(self.expr, i), self.dim)
            self._memo[i] = d
        return d

    def gradient_fields(self) -> list["ScalarField"]:
        return [self.diff(i) for i in range(self.dim)]

    # arithmetic, mostly for building test fields
    def _lift(self, other):
        if isinstance(other, ScalarField):
            if other.dim != self.dim:
                raise ValueError("dimension mismatch")
            return other.expr
        return const(other)

    def __add__(self, o):
        return ScalarField(add(self.expr, self._lift(o)), self.dim)

    def __radd__(self, o):
        return ScalarField(add(self._lift(o), self.expr), self.dim)

    def __sub__(self, o):
        return ScalarField(sub(self.expr, self._lift(o)), self.dim)

    def __rsub__(self, o):
        return ScalarField(sub(self._lift(o), self.expr), self.dim)

    def __mul__(self, o):
        return ScalarField(mul(self.expr, self._lift(o)), self.dim)

    def __rmul__(self, o):
        return ScalarField(mul(self._lift(o), self.expr), self.dim)

    def __truediv__(self, o):
        return ScalarField(div(self.expr, self._lift(o)), self.dim)

    def __neg__(self):
        return ScalarField(neg(self.expr), self.dim)

    def __pow__(self, o):
        return ScalarField(power(self.expr, self._lift(o)), self.dim)


def parse(text: str, n: int) -> ScalarField:
    """Parse ``text`` into a field on R^n.

    >>> parse("x1*x4", 6).eval([2, 0, 0, 3, 0, 0])
    6.0
    """
    return ScalarField(_Parser(text, n).parse(), n)


def diff(F: ScalarField, i: int) -> ScalarField:
    return F.diff(i)


def grad(F: ScalarField, x) -> np.ndarray:
    return compile_fields(F.gradient_fields(), F.dim).eval(x)


def random_polynomial(n: int, degree: int, rng: np.random.Generator, terms: int = 6,
                      variables: Sequence[int] | None = None) -> ScalarField:
    """Random polynomial with ``terms`` monomials of total degree <= ``degree``.

    Coefficients are uniform in [-1, 1]; ``variables`` restricts the support.
    """
    pool = list(range(n)) if variables is None else list(variables)
    monos = []
    for _ in range(terms):
        deg = int(rng.integers(1, degree + 1))
        picks = rng.choice(pool, size=deg)
        coeff = float(np.round(rng.uniform(-1.0, 1.0), 6)) or 0.5
        monos.append(prod_exprs([const(coeff)] + [var(int(v)) for v in sorted(picks)]))
    return ScalarField(sum_exprs(monos), n)


def random_expression(n: int, depth: int, rng: np.random.Generator) -> ScalarField:
    """Random expression over every operator, finite on the whole of R^n.

    ``log``, ``sqrt``, division and non-integer powers are only applied to
    arguments of the form ``u^2 + c`` with ``c >= 0.5``, and ``exp`` only to
    bounded arguments, so evaluation never leaves the domain.
    """

    def positive(d):
        c = const(float(np.round(rng.uniform(0.5, 2.0), 3)))
        return add(power(build(d), const(2.0)), c)

    def build(d):
        if d <= 0 or rng.random() < 0.2:
            if rng.random() < 0.7:
                return var(int(rng.integers(n)))
            return const(float(np.round(rng.uniform(-3.0, 3.0), 3)))
        kind = int(rng.integers(12))
        if kind == 0:
            return add(build(d - 1), build(d - 1))
        if kind == 1:
            return sub(build(d - 1), build(d - 1))
        if kind == 2:
            return mul(build(d - 1), build(d - 1))
        if kind == 3:
            return div(build(d - 1), positive(d - 1))
        if kind == 4:
            return neg(build(d - 1))
        if kind == 5:
            return power(build(d - 1), const(float(rng.integers(2, 4))))
        if kind == 6:
            return power(positive(d - 1), const(float(np.round(rng.uniform(-1.5, 1.5), 2))))
        if kind == 7:
            return func("sin", build(d - 1))
        if kind == 8:
            return func("cos", build(d - 1))
        if kind == 9:
            return func("exp", func("sin", build(d - 1)))
        if kind == 10:
            return func("log", positive(d - 1))
        return func("sqrt", positive(d - 1))

    return ScalarField(build(depth), n)

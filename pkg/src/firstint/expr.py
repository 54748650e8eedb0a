"""Expression DSL over phase-space variables.

Expressions are immutable trees of frozen dataclasses, so structural
equality is plain ``==``.  Phase variables are ordered
``(x1, ..., xN, y1, ..., yN)``; ``yk`` has index ``N + k - 1``.

Two evaluation routes exist.  :func:`evaluate` walks the tree and is the
reference.  :class:`CompiledExpr` turns a tree into straight-line Python
that propagates value and all first partials in one pass (forward-mode AD
with sparse tangents); the constructor and the integrator use it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ExprSyntaxError, NonFinite, UnknownVariable, ValidationError

FUNCS = ("sqrt", "exp", "log", "sin", "cos")


@dataclass(frozen=True)
class PhaseSpace:
    """Phase space R^{2N} with coordinates x1..xN, y1..yN."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, int) or isinstance(self.n, bool) or self.n < 1:
            raise ValidationError(f"degrees of freedom must be a positive integer, got {self.n!r}")

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f"x{k}" for k in range(1, self.n + 1)) + tuple(
            f"y{k}" for k in range(1, self.n + 1)
        )

    def index(self, name: str) -> int | None:
        m = re.fullmatch(r"([xy])([1-9][0-9]*)", name)
        if m is None:
            return None
        k = int(m.group(2))
        if k > self.n:
            return None
        return k - 1 if m.group(1) == "x" else self.n + k - 1

    def var(self, name: str) -> "Var":
        i = self.index(name)
        if i is None:
            raise UnknownVariable(name)
        return Var(i, self.n)


# ---------------------------------------------------------------- nodes


class Expr:
    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        v = self.value
        if not math.isfinite(v) or math.copysign(1.0, v) < 0:
            # negative literals are spelled Neg(Const) so printing round-trips
            raise ValidationError(f"constant must be finite and non-negative, got {v!r}")
        object.__setattr__(self, "value", float(v))


@dataclass(frozen=True)
class Var(Expr):
    index: int
    n: int

    def __post_init__(self):
        if not 0 <= self.index < 2 * self.n:
            raise ValidationError(f"variable index {self.index} outside phase space of dimension {2 * self.n}")

    @property
    def name(self) -> str:
        if self.index < self.n:
            return f"x{self.index + 1}"
        return f"y{self.index - self.n + 1}"


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, int) or isinstance(self.exponent, bool):
            raise ValidationError("exponent must be an integer literal")


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    def __post_init__(self):
        if self.name not in FUNCS:
            raise ValidationError(f"unknown function {self.name!r}")


_BINARY = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.left, e.right)
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, Neg):
        return (e.operand,)
    if isinstance(e, Func):
        return (e.arg,)
    return ()


def walk(e: Expr) -> Iterable[Expr]:
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def parameters(e: Expr) -> frozenset[str]:
    return frozenset(node.name for node in walk(e) if isinstance(node, Param))


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z][A-Za-z0-9_]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos, "number, identifier or operator")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, space: PhaseSpace, params: frozenset[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.space = space
        self.params = params

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def is_op(self, *ops: str) -> bool:
        kind, value, _ = self.peek()
        return kind == "op" and value in ops

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: str):
        kind, value, pos = self.peek()
        found = "end of input" if kind == "end" else repr(value)
        raise ExprSyntaxError(f"unexpected {found}", pos, expected)

    def expect_op(self, op: str):
        if not self.is_op(op):
            self.fail(repr(op))
        self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail("operator or end of input")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.is_op("+", "-"):
            op = self.advance()[1]
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.is_op("*", "/"):
            op = self.advance()[1]
            rhs = self.factor()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def factor(self) -> Expr:
        if self.is_op("-"):
            self.advance()
            return Neg(self.power())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if not self.is_op("^"):
            return base
        self.advance()
        sign = 1
        if self.is_op("-", "+"):
            sign = -1 if self.advance()[1] == "-" else 1
        kind, value, _ = self.peek()
        if kind != "num" or not value.isdigit():
            self.fail("integer exponent")
        self.advance()
        return Pow(base, sign * int(value))

    def atom(self) -> Expr:
        kind, value, pos = self.peek()
        if kind == "num":
            self.advance()
            return Const(float(value))
        if kind == "id":
            self.advance()
            if value in FUNCS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Func(value, arg)
            index = self.space.index(value)
            if index is not None:
                return Var(index, self.space.n)
            if value in self.params:
                return Param(value)
            raise UnknownVariable(value, pos)
        if self.is_op("("):
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        self.fail("number, identifier, function or '('")


def parse(text: str, space: PhaseSpace, params: Iterable[str] = ()) -> Expr:
    """Parse ``text`` into an expression tree.

    ``^`` binds tightest, then unary minus, then ``* /``, then ``+ -``; binary
    operators are left associative.  Identifiers resolve first as phase
    variables, then as names in ``params``.
    """
    return _Parser(text, space, frozenset(params)).parse()


# ---------------------------------------------------------------- printing


def _fmt_number(v: float) -> str:
    if v.is_integer() and v < 1e15:
        return str(int(v))
    return repr(v)


def _wrapped(e: Expr) -> str:
    if isinstance(e, (Add, Sub, Mul, Div, Pow, Neg)):
        return f"({_bare(e)})"
    return _bare(e)


def _bare(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({_bare(e.arg)})"
    if isinstance(e, Pow):
        return f"{_wrapped(e.base)}^{e.exponent}"
    if isinstance(e, Neg):
        return f"-{_wrapped(e.operand)}"
    op = _BINARY[type(e)]
    return f"{_wrapped(e.left)} {op} {_wrapped(e.right)}"


def to_text(e: Expr) -> str:
    """Fully parenthesized canonical infix; ``parse(to_text(e)) == e``."""
    return _wrapped(e)


# ---------------------------------------------------------------- evaluation

_FUNC_IMPL = {
    "sqrt": math.sqrt,
    "exp": math.exp,
    "log": math.log,
    "sin": math.sin,
    "cos": math.cos,
}


def _as_floats(point: Sequence[float]) -> list[float]:
    if isinstance(point, np.ndarray):
        values = point.astype(float).ravel().tolist()
    else:
        values = [float(v) for v in point]
    if not all(math.isfinite(v) for v in values):
        raise NonFinite("point has non-finite coordinates")
    return values


def _eval(e: Expr, p: list[float], bindings: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return p[e.index]
    if isinstance(e, Param):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise UnknownVariable(e.name) from None
    if isinstance(e, Add):
        v = _eval(e.left, p, bindings) + _eval(e.right, p, bindings)
    elif isinstance(e, Sub):
        v = _eval(e.left, p, bindings) - _eval(e.right, p, bindings)
    elif isinstance(e, Mul):
        v = _eval(e.left, p, bindings) * _eval(e.right, p, bindings)
    elif isinstance(e, Div):
        v = _eval(e.left, p, bindings) / _eval(e.right, p, bindings)
    elif isinstance(e, Pow):
        v = _eval(e.base, p, bindings) ** e.exponent
    elif isinstance(e, Neg):
        v = -_eval(e.operand, p, bindings)
    else:
        v = _FUNC_IMPL[e.name](_eval(e.arg, p, bindings))
    if not math.isfinite(v):
        raise NonFinite(f"non-finite value in {to_text(e)}")
    return v


def evaluate(e: Expr, point: Sequence[float], bindings: Mapping[str, float] | None = None) -> float:
    """IEEE double evaluation of ``e`` by direct tree walk.

    Raises NonFinite on division by zero, log/sqrt outside their domain,
    or overflow.
    """
    p = _as_floats(point)
    if any(2 * node.n != len(p) for node in walk(e) if isinstance(node, Var)):
        raise ValidationError(f"point has {len(p)} coordinates, which does not match the expression's phase space")
    try:
        return _eval(e, p, bindings or {})
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise NonFinite(f"{exc} while evaluating {to_text(e)}") from None


# ---------------------------------------------------------------- compiled AD


class _Emitter:
    """Emit straight-line code; each derivative map holds only nonzero partials."""

    def __init__(self, bindings: Mapping[str, float], with_grad: bool):
        self.bindings = bindings
        self.with_grad = with_grad
        self.lines: list[str] = []
        self.count = 0
        self.loaded: dict[int, str] = {}

    def assign(self, rhs: str) -> str:
        name = f"t{self.count}"
        self.count += 1
        self.lines.append(f"{name} = {rhs}")
        return name

    def _mul(self, a: str, b: str) -> str:
        if a == "1.0":
            return b
        if b == "1.0":
            return a
        return f"{a} * {b}"

    def _settle(self, grads: dict[int, str]) -> dict[int, str]:
        return {i: d if d.isidentifier() or d == "1.0" else self.assign(d) for i, d in grads.items()}

    def visit(self, e: Expr) -> tuple[str, dict[int, str]]:
        if isinstance(e, Const):
            return f"({e.value!r})", {}
        if isinstance(e, Param):
            try:
                value = float(self.bindings[e.name])
            except KeyError:
                raise UnknownVariable(e.name) from None
            return f"({value!r})", {}
        if isinstance(e, Var):
            if e.index not in self.loaded:
                self.loaded[e.index] = self.assign(f"p[{e.index}]")
            return self.loaded[e.index], {e.index: "1.0"}
        if isinstance(e, (Add, Sub)):
            a, da = self.visit(e.left)
            b, db = self.visit(e.right)
            op = "+" if isinstance(e, Add) else "-"
            v = self.assign(f"{a} {op} {b}")
            if not self.with_grad:
                return v, {}
            grads = {}
            for i in da.keys() | db.keys():
                if i in da and i in db:
                    grads[i] = f"{da[i]} {op} {db[i]}"
                elif i in da:
                    grads[i] = da[i]
                else:
                    grads[i] = db[i] if op == "+" else f"-{db[i]}"
            return v, self._settle(grads)
        if isinstance(e, Mul):
            a, da = self.visit(e.left)
            b, db = self.visit(e.right)
            v = self.assign(f"{a} * {b}")
            if not self.with_grad:
                return v, {}
            grads = {}
            for i in da.keys() | db.keys():
                terms = []
                if i in da:
                    terms.append(self._mul(da[i], b))
                if i in db:
                    terms.append(self._mul(a, db[i]))
                grads[i] = " + ".join(terms)
            return v, self._settle(grads)
        if isinstance(e, Div):
            a, da = self.visit(e.left)
            b, db = self.visit(e.right)
            v = self.assign(f"{a} / {b}")
            if not self.with_grad:
                return v, {}
            grads = {}
            for i in da.keys() | db.keys():
                num = da.get(i, "0.0")
                if i in db:
                    num = f"{num} - {self._mul(v, db[i])}"
                grads[i] = f"({num}) / {b}"
            return v, self._settle(grads)
        if isinstance(e, Pow):
            a, da = self.visit(e.base)
            n = e.exponent
            v = self.assign(f"{a} ** {n}")
            if not self.with_grad or not da or n == 0:
                return v, {}
            factor = "1.0" if n == 1 else self.assign(f"{float(n)!r} * {a} ** {n - 1}")
            return v, self._settle({i: self._mul(factor, d) for i, d in da.items()})
        if isinstance(e, Neg):
            a, da = self.visit(e.operand)
            v = self.assign(f"-{a}")
            return v, self._settle({i: f"-{d}" for i, d in da.items()})
        a, da = self.visit(e.arg)
        v = self.assign(f"_{e.name}({a})")
        if not self.with_grad or not da:
            return v, {}
        if e.name == "sqrt":
            factor = self.assign(f"0.5 / {v}")
        elif e.name == "exp":
            factor = v
        elif e.name == "log":
            factor = self.assign(f"1.0 / {a}")
        elif e.name == "sin":
            factor = self.assign(f"_cos({a})")
        else:
            factor = self.assign(f"-_sin({a})")
        return v, self._settle({i: self._mul(factor, d) for i, d in da.items()})


_NAMESPACE = {f"_{name}": fn for name, fn in _FUNC_IMPL.items()}


def _build(e: Expr, dim: int, bindings: Mapping[str, float], with_grad: bool):
    em = _Emitter(bindings, with_grad)
    value, grads = em.visit(e)
    body = em.lines or ["pass"]
    if with_grad:
        grad_items = ", ".join(grads.get(i, "0.0") for i in range(dim))
        ret = f"return {value}, ({grad_items}{',' if dim == 1 else ''})"
    else:
        ret = f"return {value}"
    src = "def _f(p):\n" + "".join(f"    {line}\n" for line in body) + f"    {ret}\n"
    namespace = dict(_NAMESPACE)
    exec(compile(src, "<firstint-expr>", "exec"), namespace)
    return namespace["_f"]


class CompiledExpr:
    """An expression with bound parameters, compiled for fast evaluation.

    ``value_and_grad`` returns exact first partials (forward mode) in the
    fixed coordinate order.
    """

    def __init__(self, e: Expr, dim: int, bindings: Mapping[str, float] | None = None):
        bindings = dict(bindings or {})
        for node in walk(e):
            if isinstance(node, Var) and node.index >= dim:
                raise ValidationError(f"variable {node.name} outside phase space of dimension {dim}")
        self.expr = e
        self.dim = dim
        self._value = _build(e, dim, bindings, with_grad=False)
        self._value_grad = _build(e, dim, bindings, with_grad=True)

    def _check_point(self, point) -> list[float]:
        p = _as_floats(point)
        if len(p) != self.dim:
            raise ValidationError(f"point has {len(p)} coordinates, expected {self.dim}")
        return p

    def value(self, point: Sequence[float]) -> float:
        p = self._check_point(point)
        try:
            v = self._value(p)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise NonFinite(f"{exc} while evaluating {to_text(self.expr)}") from None
        if not math.isfinite(v):
            raise NonFinite(f"non-finite value of {to_text(self.expr)}")
        return v

    def value_and_grad(self, point: Sequence[float]) -> tuple[float, np.ndarray]:
        p = self._check_point(point)
        try:
            v, g = self._value_grad(p)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise NonFinite(f"{exc} while differentiating {to_text(self.expr)}") from None
        grad = np.array(g, dtype=float)
        if not math.isfinite(v) or not np.isfinite(grad).all():
            raise NonFinite(f"non-finite derivative of {to_text(self.expr)}")
        return v, grad

    def grad(self, point: Sequence[float]) -> np.ndarray:
        return self.value_and_grad(point)[1]

    def fd_grad(self, point: Sequence[float], h: float = 1e-6) -> np.ndarray:
        """Central differences with step ``h * max(1, |coordinate|)``."""
        p = self._check_point(point)
        out = np.empty(self.dim)
        for i, v in enumerate(p):
            step = h * max(1.0, abs(v))
            plus, minus = list(p), list(p)
            plus[i] = v + step
            minus[i] = v - step
            out[i] = (self.value(plus) - self.value(minus)) / (plus[i] - minus[i])
        return out


def gradient(
    e: Expr,
    point: Sequence[float],
    bindings: Mapping[str, float] | None = None,
    mode: str = "automatic",
    h: float = 1e-6,
) -> np.ndarray:
    compiled = CompiledExpr(e, len(point), bindings)
    if mode == "automatic":
        return compiled.grad(point)
    if mode == "finite-difference":
        return compiled.fd_grad(point, h)
    raise ValueError(f"unknown gradient mode {mode!r}")

"""Expression trees with exact reverse-mode differentiation.

Expressions are immutable trees built from :class:`Const`, :class:`Var`,
:class:`Unary` and :class:`Binary` nodes. Python operators are overloaded so
problems can be written naturally::

    x, y = Var(0), Var(1)
    f = (x - 0.6) ** 2 + 0.5 * y

Two evaluation paths exist. :func:`evaluate` and :func:`gradient` walk the tree
and report the offending node on a domain error. :func:`compile_functions`
generates straight-line Python source for a batch of expressions (forward sweep
followed by an adjoint sweep) and is what the NLP solver calls in its inner loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import DomainError

# smoothing constant of sabs(u) = sqrt(u^2 + eps^2)
SABS_EPS = 1e-6

UNARY_OPS = ("neg", "exp", "log", "sqrt", "sabs")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
FUNCTIONS = ("exp", "log", "sqrt", "sabs")

_NUMERIC_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


def _as_expr(value) -> "Expr":
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool):
        return Const(float(value))
    raise TypeError(f"cannot use {type(value).__name__} in an expression")


class Expr:
    """Base class of expression nodes; provides operator overloading."""

    __slots__ = ()

    def __add__(self, other):
        return Binary("add", self, _as_expr(other))

    def __radd__(self, other):
        return Binary("add", _as_expr(other), self)

    def __sub__(self, other):
        return Binary("sub", self, _as_expr(other))

    def __rsub__(self, other):
        return Binary("sub", _as_expr(other), self)

    def __mul__(self, other):
        return Binary("mul", self, _as_expr(other))

    def __rmul__(self, other):
        return Binary("mul", _as_expr(other), self)

    def __truediv__(self, other):
        return Binary("div", self, _as_expr(other))

    def __rtruediv__(self, other):
        return Binary("div", _as_expr(other), self)

    def __pow__(self, other):
        return Binary("pow", self, _as_expr(other))

    def __rpow__(self, other):
        return Binary("pow", _as_expr(other), self)

    def __neg__(self):
        return Unary("neg", self)

    def __pos__(self):
        return self

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True, slots=True, eq=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"constant must be finite, got {self.value}")


@dataclass(frozen=True, slots=True, eq=True)
class Var(Expr):
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("variable index must be non-negative")


@dataclass(frozen=True, slots=True, eq=True)
class Unary(Expr):
    op: str
    arg: Expr

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary operator {self.op!r}")


@dataclass(frozen=True, slots=True, eq=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary operator {self.op!r}")


def exp(e) -> Expr:
    return Unary("exp", _as_expr(e))


def log(e) -> Expr:
    return Unary("log", _as_expr(e))


def sqrt(e) -> Expr:
    return Unary("sqrt", _as_expr(e))


def sabs(e) -> Expr:
    """Smooth absolute value, sqrt(e^2 + eps^2)."""
    return Unary("sabs", _as_expr(e))


def total(terms) -> Expr:
    """Left-folded sum of an iterable of expressions (``Const(0)`` if empty)."""
    result = None
    for t in terms:
        result = _as_expr(t) if result is None else result + t
    return Const(0.0) if result is None else result


def postorder(expr: Expr):
    """Yield the nodes of ``expr`` children-first, each distinct object once."""
    seen = set()
    stack = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded or isinstance(node, (Const, Var)):
            seen.add(id(node))
            yield node
            continue
        stack.append((node, True))
        if isinstance(node, Unary):
            stack.append((node.arg, False))
        else:
            stack.append((node.right, False))
            stack.append((node.left, False))


def variables(expr: Expr) -> set[int]:
    return {node.index for node in postorder(expr) if isinstance(node, Var)}


# --------------------------------------------------------------------------
# tree-walking evaluation


def _unary_value(node, a):
    op = node.op
    try:
        if op == "neg":
            return -a
        if op == "exp":
            return math.exp(a)
        if op == "log":
            if a <= 0.0:
                raise DomainError(f"log of non-positive value {a!r}", node)
            return math.log(a)
        if op == "sqrt":
            if a < 0.0:
                raise DomainError(f"sqrt of negative value {a!r}", node)
            return math.sqrt(a)
        return math.sqrt(a * a + SABS_EPS * SABS_EPS)
    except OverflowError:
        raise DomainError(f"overflow in {op}({a!r})", node) from None


def _binary_value(node, a, b):
    op = node.op
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if b == 0.0:
            raise DomainError("division by zero", node)
        return a / b
    try:
        return math.pow(a, b)
    except (ValueError, ZeroDivisionError, OverflowError):
        raise DomainError(f"pow({a!r}, {b!r}) undefined", node) from None


def _forward(expr: Expr, x) -> dict[int, float]:
    values: dict[int, float] = {}
    for node in postorder(expr):
        if isinstance(node, Const):
            v = node.value
        elif isinstance(node, Var):
            v = float(x[node.index])
        elif isinstance(node, Unary):
            v = _unary_value(node, values[id(node.arg)])
        else:
            v = _binary_value(node, values[id(node.left)], values[id(node.right)])
        values[id(node)] = v
    return values


def evaluate(expr: Expr, point) -> float:
    """Value of ``expr`` at ``point``; raises :class:`DomainError` naming the node."""
    return _forward(expr, point)[id(expr)]


def gradient(expr: Expr, point) -> np.ndarray:
    """Exact derivative of ``expr`` with respect to every entry of ``point``."""
    values = _forward(expr, point)
    nodes = list(postorder(expr))
    adj = {id(n): 0.0 for n in nodes}
    adj[id(expr)] = 1.0
    grad = np.zeros(len(point))
    for node in reversed(nodes):
        w = adj[id(node)]
        if isinstance(node, Const) or w == 0.0:
            continue
        if isinstance(node, Var):
            grad[node.index] += w
        elif isinstance(node, Unary):
            a = values[id(node.arg)]
            v = values[id(node)]
            if node.op == "neg":
                d = -1.0
            elif node.op == "exp":
                d = v
            elif node.op == "log":
                d = 1.0 / a
            elif node.op == "sqrt":
                if v == 0.0:
                    raise DomainError("sqrt is not differentiable at 0", node)
                d = 0.5 / v
            else:
                d = a / v
            adj[id(node.arg)] += w * d
        else:
            a = values[id(node.left)]
            b = values[id(node.right)]
            op = node.op
            if op == "add":
                dl, dr = 1.0, 1.0
            elif op == "sub":
                dl, dr = 1.0, -1.0
            elif op == "mul":
                dl, dr = b, a
            elif op == "div":
                dl, dr = 1.0 / b, -a / (b * b)
            else:
                dl, dr = _pow_partials(node, a, b, values[id(node)])
            adj[id(node.left)] += w * dl
            adj[id(node.right)] += w * dr
    return grad


def _pow_partials(node, a, b, v):
    try:
        if isinstance(node.right, Const):
            dl = b * math.pow(a, b - 1.0) if b != 0.0 else 0.0
            return dl, 0.0
        if a <= 0.0:
            raise DomainError("pow with variable exponent needs a positive base", node)
        return b * math.pow(a, b - 1.0), v * math.log(a)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"derivative of pow undefined at base {a!r}", node) from None


# --------------------------------------------------------------------------
# code generation


def _emit(exprs: Sequence[Expr], nvars: int, with_grad: bool) -> str:
    lines = ["def _fn(x):"]
    names: dict[int, str] = {}
    order = []
    counter = 0

    def ref(node):
        if isinstance(node, Const):
            return repr(node.value)
        return names[id(node)]

    for expr in exprs:
        for node in postorder(expr):
            if id(node) in names or isinstance(node, Const):
                continue
            name = f"v{counter}"
            counter += 1
            names[id(node)] = name
            order.append(node)
            if isinstance(node, Var):
                rhs = f"x[{node.index}]"
            elif isinstance(node, Unary):
                a = ref(node.arg)
                rhs = {
                    "neg": f"-{a}",
                    "exp": f"_exp({a})",
                    "log": f"_log({a})",
                    "sqrt": f"_sqrt({a})",
                    "sabs": f"_sqrt({a}*{a}+{SABS_EPS * SABS_EPS!r})",
                }[node.op]
            else:
                a, b = ref(node.left), ref(node.right)
                rhs = {
                    "add": f"{a} + {b}",
                    "sub": f"{a} - {b}",
                    "mul": f"{a} * {b}",
                    "div": f"{a} / {b}",
                    "pow": f"_pow({a}, {b})",
                }[node.op]
            lines.append(f"    {name} = {rhs}")

    outputs = ", ".join(ref(e) for e in exprs)
    if not with_grad:
        lines.append(f"    return [{outputs}]")
        return "\n".join(lines)

    lines.append("    rows = []")
    for expr in exprs:
        if isinstance(expr, Const):
            lines.append("    rows.append({})")
            continue
        members = {id(m) for m in postorder(expr)}
        sub = [n for n in order if id(n) in members]
        lines.append("    g = {}")
        adj = {id(n): f"a{names[id(n)][1:]}" for n in sub}
        for n in sub:
            lines.append(f"    {adj[id(n)]} = 0.0")
        lines.append(f"    {adj[id(expr)]} = 1.0")
        for n in reversed(sub):
            w = adj[id(n)]
            v = names[id(n)]
            if isinstance(n, Var):
                lines.append(f"    g[{n.index}] = g.get({n.index}, 0.0) + {w}")
                continue
            if isinstance(n, Unary):
                a = ref(n.arg)
                d = {
                    "neg": "-1.0",
                    "exp": v,
                    "log": f"1.0 / {a}",
                    "sqrt": f"0.5 / {v}",
                    "sabs": f"{a} / {v}",
                }[n.op]
                if not isinstance(n.arg, Const):
                    lines.append(f"    {adj[id(n.arg)]} += {w} * ({d})")
                continue
            a, b = ref(n.left), ref(n.right)
            if n.op == "add":
                dl, dr = "1.0", "1.0"
            elif n.op == "sub":
                dl, dr = "1.0", "-1.0"
            elif n.op == "mul":
                dl, dr = b, a
            elif n.op == "div":
                dl, dr = f"1.0 / {b}", f"-{a} / ({b} * {b})"
            elif isinstance(n.right, Const):
                exponent = n.right.value
                dl = "0.0" if exponent == 0.0 else f"{exponent!r} * _pow({a}, {exponent - 1.0!r})"
                dr = "0.0"
            else:
                dl, dr = f"{b} * _pow({a}, {b} - 1.0)", f"{v} * _logpos({a})"
            if not isinstance(n.left, Const):
                lines.append(f"    {adj[id(n.left)]} += {w} * ({dl})")
            if not isinstance(n.right, Const):
                lines.append(f"    {adj[id(n.right)]} += {w} * ({dr})")
        lines.append("    rows.append(g)")
    lines.append(f"    return [{outputs}], rows")
    return "\n".join(lines)


def _logpos(a):
    if a <= 0.0:
        raise ValueError("pow with variable exponent needs a positive base")
    return math.log(a)


_GLOBALS = {
    "_exp": math.exp,
    "_log": math.log,
    "_sqrt": math.sqrt,
    "_pow": math.pow,
    "_logpos": _logpos,
}


class CompiledFunctions:
    """Generated evaluators for a fixed list of expressions over ``nvars`` inputs.

    ``values(x)`` returns an array of expression values; ``values_and_jacobian(x)``
    also returns the dense Jacobian (one row per expression). Numeric failures
    inside the generated code surface as :class:`DomainError`.
    """

    def __init__(self, exprs: Sequence[Expr], nvars: int):
        self.exprs = tuple(exprs)
        self.nvars = nvars
        self._value_fn = self._build(with_grad=False)
        self._grad_fn = self._build(with_grad=True)

    def _build(self, with_grad) -> Callable:
        source = _emit(self.exprs, self.nvars, with_grad)
        namespace = dict(_GLOBALS)
        exec(compile(source, "<hcbb-expr>", "exec"), namespace)
        return namespace["_fn"]

    def values(self, x) -> np.ndarray:
        xs = x.tolist() if isinstance(x, np.ndarray) else list(x)
        try:
            out = self._value_fn(xs)
        except _NUMERIC_ERRORS as exc:
            raise DomainError(str(exc)) from None
        return np.array(out, dtype=float)

    def values_and_jacobian(self, x):
        xs = x.tolist() if isinstance(x, np.ndarray) else list(x)
        try:
            out, rows = self._grad_fn(xs)
        except _NUMERIC_ERRORS as exc:
            raise DomainError(str(exc)) from None
        jac = np.zeros((len(rows), self.nvars))
        for r, row in enumerate(rows):
            for j, d in row.items():
                jac[r, j] = d
        return np.array(out, dtype=float), jac


def compile_functions(exprs: Sequence[Expr], nvars: int) -> CompiledFunctions:
    return CompiledFunctions(exprs, nvars)


# --------------------------------------------------------------------------
# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 4}
_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def _prec(node) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return 3
    if isinstance(node, Const) and node.value < 0:
        return 3
    return 5


def to_text(expr: Expr, names: Sequence[str] | None = None) -> str:
    """Render ``expr`` in the problem-file grammar.

    The output parses back to a structurally identical tree.
    """

    def name(i):
        return names[i] if names is not None else f"x{i}"

    def fmt(node) -> str:
        if isinstance(node, Const):
            return repr(node.value)
        if isinstance(node, Var):
            return name(node.index)
        if isinstance(node, Unary):
            if node.op != "neg":
                return f"{node.op}({fmt(node.arg)})"
            arg = node.arg
            if isinstance(arg, Const) or _prec(arg) < 3:
                return f"-({fmt(arg)})"
            return f"-{fmt(arg)}"
        p = _PREC[node.op]
        left, right = fmt(node.left), fmt(node.right)
        if node.op == "pow":
            if _prec(node.left) <= 4:
                left = f"({left})"
            if _prec(node.right) < 3:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
        return f"{left} {_SYMBOL[node.op]} {right}"

    return fmt(expr)

"""MINLP problem container and the relax / fix transforms used at B&B nodes.

Variables live in one ordered vector: the continuous block first, then the
binary block. Every binary index set (``S``, ``S_F``, ``S_R``) in the package
refers to positions *within the binary block*; :meth:`MinlpProblem.binary_position`
maps them to positions in the full vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..errors import BoundError
from .expr import Expr, compile_functions, variables

CONTINUOUS = "continuous"
BINARY = "binary"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str = CONTINUOUS
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == BINARY and (self.lower, self.upper) != (0.0, 1.0):
            raise BoundError(f"binary variable {self.name} must have bounds [0, 1]")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise BoundError(f"variable {self.name} needs finite bounds")
        if self.lower > self.upper:
            raise BoundError(f"variable {self.name}: lower {self.lower} > upper {self.upper}")


def continuous(name, lower, upper) -> VariableSpec:
    return VariableSpec(name, CONTINUOUS, float(lower), float(upper))


def binary(name) -> VariableSpec:
    return VariableSpec(name, BINARY, 0.0, 1.0)


class _Functions:
    """Lazily compiled evaluators shared between a problem and its derived subproblems."""

    def __init__(self):
        self.objective = None
        self.constraints = None


@dataclass(frozen=True)
class MinlpProblem:
    """min f(x, y)  s.t.  h(x, y) = 0,  g(x, y) <= 0,  bounds, y binary."""

    variables: tuple[VariableSpec, ...]
    objective: Expr
    equalities: tuple[Expr, ...] = ()
    inequalities: tuple[Expr, ...] = ()
    equality_names: tuple[str, ...] = ()
    inequality_names: tuple[str, ...] = ()
    _functions: _Functions = field(default_factory=_Functions, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "equalities", tuple(self.equalities))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        if not self.equality_names:
            object.__setattr__(
                self, "equality_names", tuple(f"e{k + 1}" for k in range(len(self.equalities)))
            )
        if not self.inequality_names:
            object.__setattr__(
                self, "inequality_names", tuple(f"g{k + 1}" for k in range(len(self.inequalities)))
            )
        if len(self.equality_names) != len(self.equalities):
            raise ValueError("one name per equality constraint is required")
        if len(self.inequality_names) != len(self.inequalities):
            raise ValueError("one name per inequality constraint is required")
        if not self.variables:
            raise ValueError("a problem needs at least one variable")
        seen_binary = False
        for v in self.variables:
            if v.kind == BINARY:
                seen_binary = True
            elif seen_binary:
                raise ValueError("continuous variables must precede binary variables")
        nv = len(self.variables)
        for expr in (self.objective, *self.equalities, *self.inequalities):
            bad = [i for i in variables(expr) if i >= nv]
            if bad:
                raise ValueError(f"expression references variable index {bad[0]} >= {nv}")

    # -- shape -------------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def n(self) -> int:
        """Number of continuous variables."""
        return sum(1 for v in self.variables if v.kind == CONTINUOUS)

    @property
    def m(self) -> int:
        """Number of binary variables."""
        return self.num_vars - self.n

    @property
    def binary_indices(self) -> range:
        return range(self.m)

    def binary_position(self, s: int) -> int:
        if not 0 <= s < self.m:
            raise IndexError(f"binary index {s} outside 0..{self.m - 1}")
        return self.n + s

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def lower(self) -> np.ndarray:
        return np.array([v.lower for v in self.variables])

    @property
    def upper(self) -> np.ndarray:
        return np.array([v.upper for v in self.variables])

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def binary_values(self, point) -> np.ndarray:
        return np.asarray(point, dtype=float)[self.n:]

    # -- evaluation ----------------------------------------------------------
    def objective_functions(self):
        fns = self._functions
        if fns.objective is None or fns.objective.exprs[0] is not self.objective:
            fns.objective = compile_functions([self.objective], self.num_vars)
        return fns.objective

    def constraint_functions(self):
        fns = self._functions
        cons = (*self.equalities, *self.inequalities)
        if fns.constraints is None or len(fns.constraints.exprs) != len(cons) or any(
            a is not b for a, b in zip(fns.constraints.exprs, cons)
        ):
            fns.constraints = compile_functions(cons, self.num_vars)
        return fns.constraints

    def objective_value(self, point) -> float:
        return float(self.objective_functions().values(point)[0])

    def constraint_values(self, point):
        """Return ``(h(point), g(point))`` as two arrays."""
        vals = self.constraint_functions().values(point)
        k = len(self.equalities)
        return vals[:k], vals[k:]

    def with_variables(self, new_vars: Sequence[VariableSpec]) -> "MinlpProblem":
        """Same expressions (and compiled evaluators) under a new variable list."""
        return replace(self, variables=tuple(new_vars), _functions=self._functions)

    def with_objective(self, objective: Expr) -> "MinlpProblem":
        fns = _Functions()
        fns.constraints = self._functions.constraints
        return replace(self, objective=objective, _functions=fns)


Point = np.ndarray


def relax(prob: MinlpProblem) -> MinlpProblem:
    """Retype every binary as a continuous variable on [0, 1] (problem RP)."""
    if prob.m == 0:
        return prob
    new_vars = [
        VariableSpec(v.name, CONTINUOUS, v.lower, v.upper) if v.kind == BINARY else v
        for v in prob.variables
    ]
    return prob.with_variables(new_vars)


def fix_and_bound(
    prob: MinlpProblem,
    fixed: Mapping[int, float] | None = None,
    boxes: Mapping[int, tuple[float, float]] | None = None,
) -> MinlpProblem:
    """Relax ``prob``, then pin binaries in ``fixed`` and box those in ``boxes``.

    Keys are positions in the binary block. The result has no binary-kind
    variables; unlisted binaries stay on [0, 1].
    """
    fixed = fixed or {}
    boxes = boxes or {}
    n, m = prob.n, prob.m
    new_vars = list(relax(prob).variables)
    for s, value in fixed.items():
        if not 0 <= s < m:
            raise IndexError(f"{s} is not a binary index (m = {m})")
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise BoundError(f"fixed value {value} for binary {s} outside [0, 1]")
        v = new_vars[n + s]
        new_vars[n + s] = VariableSpec(v.name, CONTINUOUS, value, value)
    for s, (lo, hi) in boxes.items():
        if not 0 <= s < m:
            raise IndexError(f"{s} is not a binary index (m = {m})")
        lo, hi = float(lo), float(hi)
        if lo > hi:
            raise BoundError(f"box [{lo}, {hi}] for binary {s} is empty")
        if lo < 0.0 or hi > 1.0:
            raise BoundError(f"box [{lo}, {hi}] for binary {s} leaves [0, 1]")
        v = new_vars[n + s]
        new_vars[n + s] = VariableSpec(v.name, CONTINUOUS, lo, hi)
    return prob.with_variables(new_vars)


def bound_violation(prob: MinlpProblem, point) -> float:
    p = np.asarray(point, dtype=float)
    below = prob.lower - p
    above = p - prob.upper
    return float(max(0.0, below.max(initial=0.0), above.max(initial=0.0)))


def max_violation(prob: MinlpProblem, point) -> float:
    """Largest of |h_k|, max(0, g_k) and any bound violation at ``point``; 0 iff feasible."""
    p = np.asarray(point, dtype=float)
    if p.shape != (prob.num_vars,):
        raise ValueError(f"point has length {p.size}, problem has {prob.num_vars} variables")
    h, g = prob.constraint_values(p)
    worst = bound_violation(prob, p)
    if h.size:
        worst = max(worst, float(np.abs(h).max()))
    if g.size:
        worst = max(worst, float(g.max()))
    return worst


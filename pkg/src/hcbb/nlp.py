"""Local NLP solver: augmented Lagrangian outer loop, L-BFGS-B inner solves.

The solver handles problems whose variables are all continuous (binaries fixed
or relaxed upstream). Equalities ``h(x) = 0`` and inequalities ``g(x) <= 0`` are
moved into a Powell-Hestenes-Rockafellar augmented Lagrangian; simple bounds
stay with the inner quasi-Newton method.

In ``feasibility_only`` mode the objective is dropped, so the first inner solve
minimizes the squared constraint violation, and the solve stops at the first
outer iterate whose violation is within tolerance.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, minimize

from .errors import DomainError
from .model.problem import MinlpProblem, fix_and_bound, max_violation

log = logging.getLogger(__name__)

OPTIMIZE = "optimize"
FEASIBILITY_ONLY = "feasibility_only"

PENALTY_INIT = 10.0
PENALTY_FACTOR = 10.0
PENALTY_CAP = 1e10
MULTIPLIER_CAP = 1e10
STALL_LIMIT = 3
INNER_MAXITER = 3000


class NlpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"


@dataclass(frozen=True)
class NlpOptions:
    feasibility_tolerance: float = 1e-7
    optimality_tolerance: float = 1e-6
    max_iterations: int = 500
    objective_mode: str = OPTIMIZE

    def __post_init__(self):
        if self.feasibility_tolerance <= 0 or self.optimality_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.objective_mode not in (OPTIMIZE, FEASIBILITY_ONLY):
            raise ValueError(f"unknown objective_mode {self.objective_mode!r}")

    def feasibility_only(self) -> "NlpOptions":
        return NlpOptions(
            self.feasibility_tolerance, self.optimality_tolerance, self.max_iterations, FEASIBILITY_ONLY
        )

    def optimize(self) -> "NlpOptions":
        return NlpOptions(
            self.feasibility_tolerance, self.optimality_tolerance, self.max_iterations, OPTIMIZE
        )


@dataclass
class NlpResult:
    status: NlpStatus
    point: np.ndarray
    objective: float
    violation: float
    outer_iterations: int = 0
    inner_iterations: int = 0
    message: str = ""
    multipliers: dict = field(default_factory=dict, repr=False)

    @property
    def ok(self) -> bool:
        return self.status in (NlpStatus.OPTIMAL, NlpStatus.FEASIBLE)


def projected_gradient_norm(x, grad, lower, upper) -> float:
    if x.size == 0:
        return 0.0
    return float(np.abs(np.clip(x - grad, lower, upper) - x).max())


def kkt_residual(x, grad_f, jac, n_eq, g_values, lower, upper, active_tol=1e-6) -> tuple[float, float]:
    """Projected gradient of the Lagrangian with least-squares multiplier estimates.

    Equality multipliers are free, multipliers of inequalities within
    ``active_tol`` of their bound are kept nonnegative, the rest are zero.
    Variables sitting on a bound are left out of the fit; the projection
    absorbs their bound multipliers. Returns the residual and the largest
    single constraint term ``|lambda_j| * max|J_j|`` for scaling.
    """
    active = np.concatenate([np.ones(n_eq, dtype=bool), g_values >= -active_tol])
    rows = jac[active]
    if rows.shape[0] == 0:
        return projected_gradient_norm(x, grad_f, lower, upper), 0.0
    span = np.maximum(upper - lower, 1.0)
    free = (x > lower + 1e-12 * span) & (x < upper - 1e-12 * span)
    lb = np.where(np.arange(len(active))[active] < n_eq, -np.inf, 0.0)
    if free.any():
        fit = lsq_linear(rows[:, free].T, -grad_f[free], bounds=(lb, np.full_like(lb, np.inf)))
        mult = fit.x
    else:
        mult = np.zeros(rows.shape[0])
    term = float((np.abs(mult) * np.abs(rows).max(axis=1, initial=0.0)).max(initial=0.0))
    return projected_gradient_norm(x, grad_f + rows.T @ mult, lower, upper), term


class _AugmentedLagrangian:
    def __init__(self, prob: MinlpProblem, use_objective: bool):
        self.obj = prob.objective_functions() if use_objective else None
        self.cons = prob.constraint_functions()
        self.k = len(prob.equalities)
        self.nc = len(prob.equalities) + len(prob.inequalities)
        self.nvars = prob.num_vars
        self.lam = np.zeros(self.k)
        self.mu = np.zeros(self.nc - self.k)
        self.rho = PENALTY_INIT

    def objective_and_grad(self, x):
        if self.obj is None:
            return 0.0, np.zeros(self.nvars)
        val, jac = self.obj.values_and_jacobian(x)
        return float(val[0]), jac[0]

    def constraints(self, x):
        if self.nc == 0:
            return np.zeros(0), np.zeros((0, self.nvars))
        return self.cons.values_and_jacobian(x)

    def __call__(self, x):
        try:
            f, gf = self.objective_and_grad(x)
            c, jc = self.constraints(x)
        except DomainError:
            return np.inf, np.zeros(self.nvars)
        k, rho = self.k, self.rho
        h, g = c[:k], c[k:]
        shifted = np.maximum(0.0, self.mu + rho * g)
        value = f + self.lam @ h + 0.5 * rho * (h @ h) + (shifted @ shifted - self.mu @ self.mu) / (2 * rho)
        grad = gf + jc[:k].T @ (self.lam + rho * h) + jc[k:].T @ shifted
        return float(value), grad

    def violation(self, x) -> float:
        c, _ = self.constraints(x)
        h, g = c[: self.k], c[self.k:]
        v = 0.0
        if h.size:
            v = max(v, float(np.abs(h).max()))
        if g.size:
            v = max(v, float(g.max()))
        return v

    def update_multipliers(self, x):
        c = self.cons.values(x) if self.nc else np.zeros(0)
        h, g = c[: self.k], c[self.k:]
        self.lam = np.clip(self.lam + self.rho * h, -MULTIPLIER_CAP, MULTIPLIER_CAP)
        self.mu = np.clip(self.mu + self.rho * g, 0.0, MULTIPLIER_CAP)


def _inner_solve(fun, x, bounds, gtol):
    res = minimize(
        fun,
        x,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": INNER_MAXITER, "gtol": gtol, "ftol": 1e-15, "maxcor": 20},
    )
    return np.asarray(res.x, dtype=float), int(res.get("nit", 0))


def _objective(prob, x, feasibility_only):
    if feasibility_only:
        return 0.0
    return prob.objective_value(x)


def solve_nlp(prob: MinlpProblem, start, opts: NlpOptions | None = None) -> NlpResult:
    """Solve a continuous problem locally from ``start``.

    Returns ``Optimal`` (optimize mode) or ``Feasible`` (feasibility_only mode)
    when a point within the feasibility tolerance is reached, ``Infeasible``
    when the violation stalls with the penalty at its cap, and
    ``IterationLimit`` otherwise. Start values outside the bounds are clipped.
    """
    opts = opts or NlpOptions()
    if prob.m:
        raise ValueError("solve_nlp needs a continuous problem; fix or relax binaries first")
    lower, upper = prob.lower, prob.upper
    x = np.clip(np.asarray(start, dtype=float), lower, upper)
    feas_only = opts.objective_mode == FEASIBILITY_ONLY
    tol = opts.feasibility_tolerance
    bounds = list(zip(lower, upper))

    def result(status, x, outer, inner, message=""):
        viol = max_violation(prob, x)
        if status in (NlpStatus.OPTIMAL, NlpStatus.FEASIBLE) and viol > tol:
            status = NlpStatus.INFEASIBLE
        return NlpResult(status, x, _objective(prob, x, feas_only), viol, outer, inner, message)

    try:
        start_violation = max_violation(prob, x)
        if not feas_only:
            prob.objective_value(x)
    except DomainError as exc:
        return NlpResult(NlpStatus.INFEASIBLE, x, float("nan"), float("inf"), 0, 0, f"domain error at start: {exc}")

    if feas_only and start_violation <= tol:
        return result(NlpStatus.FEASIBLE, x, 0, 0)

    al = _AugmentedLagrangian(prob, use_objective=not feas_only)
    inner_total = 0
    if al.nc == 0:
        if feas_only:
            return result(NlpStatus.FEASIBLE, x, 0, 0)
        for attempt in range(3):
            x, nit = _inner_solve(al, x, bounds, 0.1 * opts.optimality_tolerance)
            inner_total += nit
            f, gf = al.objective_and_grad(x)
            scale = max(1.0, float(np.abs(gf).max(initial=0.0)))
            if projected_gradient_norm(x, gf, lower, upper) <= opts.optimality_tolerance * scale:
                return result(NlpStatus.OPTIMAL, x, attempt + 1, inner_total)
        return result(NlpStatus.ITERATION_LIMIT, x, 3, inner_total, "stationarity not reached")

    prev_violation = np.inf
    best_at_cap = np.inf
    stalls = 0
    for outer in range(1, opts.max_iterations + 1):
        gtol = 1e-3 * tol if feas_only else 0.1 * opts.optimality_tolerance
        x, nit = _inner_solve(al, x, bounds, gtol)
        inner_total += nit
        try:
            viol = al.violation(x)
        except DomainError as exc:
            return result(NlpStatus.INFEASIBLE, x, outer, inner_total, f"domain error: {exc}")

        if feas_only and viol <= tol:
            return result(NlpStatus.FEASIBLE, x, outer, inner_total)

        al.update_multipliers(x)
        if not feas_only and viol <= tol:
            _, gf = al.objective_and_grad(x)
            scale = max(1.0, float(np.abs(gf).max(initial=0.0)))
            bound = opts.optimality_tolerance * scale
            if projected_gradient_norm(x, al(x)[1], lower, upper) <= bound:
                return result(NlpStatus.OPTIMAL, x, outer, inner_total)
            c, jc = al.constraints(x)
            residual, term = kkt_residual(x, gf, jc, al.k, c[al.k:], lower, upper)
            if residual <= opts.optimality_tolerance * max(scale, term):
                return result(NlpStatus.OPTIMAL, x, outer, inner_total)

        if viol > tol:
            if al.rho >= PENALTY_CAP:
                if viol >= (1.0 - 1e-3) * best_at_cap:
                    stalls += 1
                else:
                    stalls = 0
                best_at_cap = min(best_at_cap, viol)
                if stalls >= STALL_LIMIT:
                    return result(
                        NlpStatus.INFEASIBLE, x, outer, inner_total, "violation stalled at penalty cap"
                    )
            elif viol > 0.25 * prev_violation:
                al.rho = min(al.rho * PENALTY_FACTOR, PENALTY_CAP)
        prev_violation = viol
    return result(NlpStatus.ITERATION_LIMIT, x, opts.max_iterations, inner_total, "outer iteration limit")


def polish_round(
    prob: MinlpProblem, point, epsilon_int: float = 1e-5, opts: NlpOptions | None = None
) -> NlpResult:
    """Round binaries within ``epsilon_int`` of 0 or 1, fix them, and re-solve from ``point``.

    Binaries farther from integrality stay relaxed on [0, 1].
    """
    opts = (opts or NlpOptions()).optimize()
    point = np.asarray(point, dtype=float)
    y = prob.binary_values(point)
    fixed = {}
    for s, value in enumerate(y):
        if abs(value) <= epsilon_int:
            fixed[s] = 0.0
        elif abs(value - 1.0) <= epsilon_int:
            fixed[s] = 1.0
    sub = fix_and_bound(prob, fixed)
    start = point.copy()
    for s, value in fixed.items():
        start[prob.n + s] = value
    return solve_nlp(sub, start, opts)

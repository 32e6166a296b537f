"""Homotopy continuation from a parent node's solution to a child subproblem.

At a child node the branched binary moves from the parent's fractional value
toward its target along ``(1 - t) * parent_value + t * target``. Two subproblem
families are walked:

* ``FP`` pins the binary at the interpolated value and only seeks a feasible
  point at each ``t``; the original subproblem is optimized once ``t = 1``.
* ``RB`` keeps the objective and boxes the binary between the interpolated
  value and its target, so optimal values rise with ``t`` and a node can be
  abandoned as soon as one exceeds the incumbent.

Step lengths adapt: a successful step is reused, two equal successful step
lengths in a row double it, and a failure halves it and retries from the last
converged point. Completed nodes record their successful ``(t, dt)`` schedule
so later nodes branching the same way from a nearby value can replay it.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import RangeError
from .model.expr import Const
from .model.problem import MinlpProblem, fix_and_bound
from .nlp import NlpOptions, NlpResult, NlpStatus, solve_nlp

FP = "FP"
RB = "RB"


@dataclass(frozen=True)
class HomotopyOptions:
    """``n_max`` is the iteration cap N, ``dt_min`` the smallest step, ``delta`` the match radius."""

    n_max: int = 50
    dt_min: float = 0.01
    delta: float = 0.1

    def __post_init__(self):
        if self.n_max <= 1:
            raise ValueError("n_max must exceed 1")
        if not 0.0 < self.dt_min < 1.0:
            raise ValueError("dt_min must lie in (0, 1)")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")


REFINE_OPTIONS = HomotopyOptions(n_max=1000, dt_min=1e-15)


@dataclass(frozen=True)
class HomotopyAnchor:
    branch_index: int
    parent_value: float
    target: int

    def __post_init__(self):
        if not 0.0 < self.parent_value < 1.0:
            raise ValueError(f"parent value {self.parent_value} is not fractional")
        if self.target not in (0, 1):
            raise ValueError("target must be 0 or 1")


def _check_t(t):
    if not 0.0 <= t <= 1.0 or math.isnan(t):
        raise RangeError(f"homotopy parameter t = {t} outside [0, 1]")


def homotopy_value(anchor: HomotopyAnchor, t: float) -> float:
    _check_t(t)
    if t == 1.0:
        return float(anchor.target)
    return (1.0 - t) * anchor.parent_value + t * anchor.target


def fixed_vector(y_fixed, anchor: HomotopyAnchor, t: float):
    """Fixed binary values with the anchored entry moved to its homotopy value.

    ``y_fixed`` is either a mapping from binary index to value (the anchor's
    ``branch_index`` is a key) or a sequence in which ``branch_index`` is a
    position. The same container type is returned.
    """
    value = homotopy_value(anchor, t)
    if isinstance(y_fixed, Mapping):
        if anchor.branch_index not in y_fixed:
            raise KeyError(f"binary {anchor.branch_index} is not in the fixed set")
        out = dict(y_fixed)
        out[anchor.branch_index] = value
        return out
    out = np.array(y_fixed, dtype=float)
    out[anchor.branch_index] = value
    return out


def rb_box(anchor: HomotopyAnchor, t: float) -> tuple[float, float]:
    """Interval allowed for the anchored binary in the bound-tightening subproblem."""
    edge = homotopy_value(anchor, t)
    return (edge, 1.0) if anchor.target == 1 else (0.0, edge)


def _require_anchor(node):
    if node.anchor is None:
        raise ValueError("homotopy subproblems need a non-root node")
    return node.anchor


def build_nlpfx(prob: MinlpProblem, node, t: float) -> MinlpProblem:
    anchor = _require_anchor(node)
    return fix_and_bound(prob, fixed_vector(node.fixed, anchor, t))


def build_nlpfp(prob: MinlpProblem, node, t: float) -> MinlpProblem:
    """Like :func:`build_nlpfx` with a constant objective; solve in feasibility_only mode."""
    return build_nlpfx(prob, node, t).with_objective(Const(0.0))


def build_nlprb(prob: MinlpProblem, node, t: float) -> MinlpProblem:
    anchor = _require_anchor(node)
    fixed = {s: v for s, v in node.fixed.items() if s != anchor.branch_index}
    return fix_and_bound(prob, fixed, {anchor.branch_index: rb_box(anchor, t)})


def build_nlp0(prob: MinlpProblem, node) -> MinlpProblem:
    return fix_and_bound(prob, node.fixed)


# --------------------------------------------------------------------------
# step-length automaton


@dataclass
class HomotopyState:
    """Iteration record: ``t_values[k]`` is t^k and ``dt_values[k]`` is dt^k.

    While iteration ``nu`` is pending, ``t_values`` ends with t^nu and
    ``dt_values`` ends with dt^(nu-1).
    """

    n_max: int = 50
    dt_min: float = 0.01
    nu: int = 1
    t_values: list[float] = field(default_factory=lambda: [0.0, 1.0])
    dt_values: list[float] = field(default_factory=lambda: [1.0])
    t_success: float = 0.0
    last_converged: tuple | None = None

    @classmethod
    def start(cls, t0=0.0, dt0=1.0, n_max=50, dt_min=0.01, point=None, objective=None):
        return cls(
            n_max=n_max,
            dt_min=dt_min,
            t_values=[t0, min(t0 + dt0, 1.0)],
            dt_values=[dt0],
            t_success=t0,
            last_converged=(point, t0, objective),
        )

    @property
    def t(self) -> float:
        return self.t_values[-1]

    def may_continue(self) -> bool:
        return self.nu < self.n_max and self.dt_values[-1] > self.dt_min

    def advance(self, dt, t_next):
        self.dt_values.append(dt)
        self.t_values.append(t_next)
        self.nu += 1


def next_on_success(state: HomotopyState) -> tuple[float, float]:
    """Keep the last step length, or double it when the last two are equal."""
    dts = state.dt_values
    if len(dts) < 2 or dts[-1] != dts[-2]:
        dt = dts[-1]
    else:
        dt = 2.0 * dts[-1]
    return dt, min(state.t + dt, 1.0)


def next_on_failure(state: HomotopyState) -> tuple[float, float]:
    """Halve the step and retry from the last successful t."""
    dt = state.dt_values[-1] / 2.0
    return dt, min(state.t_success + dt, 1.0)


# --------------------------------------------------------------------------
# schedule history


@dataclass(frozen=True)
class HistoryEntry:
    node_id: int
    branch_index: int
    target: int
    parent_value: float
    schedule: tuple[tuple[float, float], ...]


class NodeHistory:
    """Append-only store of completed nodes and their successful step schedules."""

    def __init__(self):
        self.entries: list[HistoryEntry] = []

    def add(self, entry: HistoryEntry):
        if not entry.schedule or entry.schedule[-1][0] != 1.0:
            raise ValueError("only schedules that reached t = 1 are recorded")
        ts = [t for t, _ in entry.schedule]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("schedule t values must be strictly increasing")
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def find_match(node, history, delta: float) -> HistoryEntry | None:
    """Closest earlier node with the same branch variable and target, within ``delta``."""
    if node.anchor is None or history is None:
        return None
    anchor = node.anchor
    best, best_gap = None, math.inf
    for entry in history:
        if entry.branch_index != anchor.branch_index or entry.target != anchor.target:
            continue
        gap = abs(entry.parent_value - anchor.parent_value)
        if gap < delta and gap < best_gap:
            best, best_gap = entry, gap
    return best


# --------------------------------------------------------------------------
# driver


class OutcomeKind(str, enum.Enum):
    SOLVED = "Solved"
    BOUND_PRUNED = "BoundPruned"
    STALLED = "Stalled"


@dataclass
class HomotopyOutcome:
    kind: OutcomeKind
    nlp_solve_count: int
    result: NlpResult | None = None
    objective: float | None = None
    last_point: np.ndarray | None = None
    last_t: float = 0.0
    last_objective: float | None = None
    last_dt: float = 1.0
    schedule: tuple[tuple[float, float], ...] = ()
    calls: list[tuple[float, str]] = field(default_factory=list)
    matched: int | None = None


class _Walk:
    def __init__(self, prob, node, variant, f_ub, nlp_opts, solver):
        if variant not in (FP, RB):
            raise ValueError(f"unknown homotopy variant {variant!r}")
        self.prob = prob
        self.node = node
        self.variant = variant
        self.f_ub = f_ub
        self.solver = solver
        self.opts = nlp_opts.feasibility_only() if variant == FP else nlp_opts.optimize()
        self.nlp0_opts = nlp_opts.optimize()
        self.calls: list[tuple[float, str]] = []
        self.schedule: list[tuple[float, float]] = []

    def solve_at(self, t, point) -> NlpResult:
        if self.variant == FP:
            sub = build_nlpfp(self.prob, self.node, t)
        else:
            sub = build_nlprb(self.prob, self.node, t)
        res = self.solver(sub, point, self.opts)
        self.calls.append((t, res.status.value))
        return res

    def success(self, state, t, res):
        objective = res.objective if self.variant == RB else None
        self.schedule.append((t, t - state.t_success))
        state.t_success = t
        state.last_converged = (res.point, t, objective)

    def intermediate_prune(self, res) -> bool:
        return self.variant == RB and res.status == NlpStatus.OPTIMAL and res.objective > self.f_ub

    def solved(self, res, matched):
        result = res
        if self.variant == FP:
            sub = build_nlp0(self.prob, self.node)
            final = self.solver(sub, res.point, self.nlp0_opts)
            self.calls.append((1.0, f"NLP0:{final.status.value}"))
            if final.ok:
                result = final
            else:
                result = NlpResult(
                    NlpStatus.FEASIBLE,
                    res.point,
                    self.prob.objective_value(res.point),
                    res.violation,
                    message="optimality solve at t = 1 failed; keeping the feasible point",
                )
        return HomotopyOutcome(
            OutcomeKind.SOLVED,
            len(self.calls),
            result=result,
            objective=result.objective,
            last_point=result.point,
            last_t=1.0,
            last_objective=result.objective,
            schedule=tuple(self.schedule),
            calls=self.calls,
            matched=matched,
        )

    def pruned(self, state, res, matched):
        point, t, objective = state.last_converged
        return HomotopyOutcome(
            OutcomeKind.BOUND_PRUNED,
            len(self.calls),
            objective=res.objective,
            last_point=point,
            last_t=t,
            last_objective=objective,
            last_dt=state.dt_values[-1],
            schedule=tuple(self.schedule),
            calls=self.calls,
            matched=matched,
        )

    def stalled(self, state, matched):
        point, t, objective = state.last_converged
        return HomotopyOutcome(
            OutcomeKind.STALLED,
            len(self.calls),
            last_point=point,
            last_t=t,
            last_objective=objective,
            last_dt=state.dt_values[-1],
            schedule=tuple(self.schedule),
            calls=self.calls,
            matched=matched,
        )


def run_homotopy(
    prob: MinlpProblem,
    node,
    variant: str,
    f_ub: float = math.inf,
    opts: HomotopyOptions | None = None,
    history: NodeHistory | None = None,
    *,
    nlp_opts: NlpOptions | None = None,
    solver: Callable = solve_nlp,
    t0: float = 0.0,
    dt0: float = 1.0,
    start=None,
    start_objective: float | None = None,
) -> HomotopyOutcome:
    """Walk ``node``'s subproblem from its parent solution to ``t = 1``.

    With a matching entry in ``history`` its schedule is replayed until the
    first failure, after which the adaptive rule takes over. ``t0``, ``dt0`` and
    ``start`` let the refinement pass resume a stalled walk; matching is skipped
    whenever ``t0 > 0``.
    """
    opts = opts or HomotopyOptions()
    nlp_opts = nlp_opts or NlpOptions()
    if start is None:
        start = node.parent_point
        if start_objective is None:
            start_objective = node.parent_objective
    walk = _Walk(prob, node, variant, f_ub, nlp_opts, solver)
    point = np.asarray(start, dtype=float)
    rb_objective = start_objective if variant == RB else None

    match = find_match(node, history, opts.delta) if t0 == 0.0 else None
    matched_id = match.node_id if match else None
    if match is not None:
        sched = match.schedule
        state = HomotopyState.start(
            0.0, sched[0][1], opts.n_max, opts.dt_min, point, rb_objective
        )
        state.t_values[-1] = sched[0][0]
        v = 0
        while True:
            t = state.t
            res = walk.solve_at(t, point)
            if res.ok:
                walk.success(state, t, res)
                if t >= 1.0:
                    return walk.solved(res, matched_id)
                if walk.intermediate_prune(res):
                    return walk.pruned(state, res, matched_id)
                point = res.point
                if v + 1 < len(sched):
                    v += 1
                    state.advance(sched[v][1], sched[v][0])
                    continue
                state.advance(*next_on_success(state))
                break
            dt = sched[v][1] / 2.0
            state.advance(dt, min(state.t_success + dt, 1.0))
            point = state.last_converged[0]
            break
    else:
        state = HomotopyState.start(t0, dt0, opts.n_max, opts.dt_min, point, rb_objective)

    while state.may_continue():
        t = state.t
        res = walk.solve_at(t, point)
        if res.ok:
            walk.success(state, t, res)
            if t >= 1.0:
                return walk.solved(res, matched_id)
            if walk.intermediate_prune(res):
                return walk.pruned(state, res, matched_id)
            point = res.point
            state.advance(*next_on_success(state))
        else:
            state.advance(*next_on_failure(state))
            point = state.last_converged[0]
    return walk.stalled(state, matched_id)

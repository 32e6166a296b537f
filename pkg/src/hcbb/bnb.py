"""Best-first branch and bound, plain or with homotopy-continued child solves.

``BB`` solves each child subproblem once, warm-started from the parent
solution. ``HCBB_FP`` and ``HCBB_RB`` reach each child through
:func:`hcbb.homotopy.run_homotopy`; nodes whose walk stalls are collected and
revisited by :mod:`hcbb.postcheck` after the main search.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NoFractional, RootFailure
from .homotopy import (
    FP,
    RB,
    HistoryEntry,
    HomotopyAnchor,
    HomotopyOptions,
    NodeHistory,
    OutcomeKind,
    build_nlp0,
    run_homotopy,
)
from .model.problem import MinlpProblem, max_violation, relax
from .nlp import NlpOptions, NlpResult, polish_round, solve_nlp
from .postcheck import record_infeasible, run_postcheck_loop

log = logging.getLogger(__name__)

BB = "BB"
HCBB_FP = "HCBB-FP"
HCBB_RB = "HCBB-RB"
ALGORITHMS = (BB, HCBB_FP, HCBB_RB)

_ALIASES = {
    "bb": BB,
    "hcbb-fp": HCBB_FP,
    "hcbb_fp": HCBB_FP,
    "hcbb-rb": HCBB_RB,
    "hcbb_rb": HCBB_RB,
}


def normalize_algorithm(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}") from None


@dataclass
class Node:
    id: int
    fixed: dict[int, float]
    relaxed: frozenset[int]
    anchor: HomotopyAnchor | None = None
    parent_point: np.ndarray | None = None
    parent_objective: float | None = None
    depth: int = 0

    @property
    def key(self) -> float:
        return -math.inf if self.parent_objective is None else self.parent_objective

    @property
    def is_root(self) -> bool:
        return self.anchor is None


def root_node(m: int) -> Node:
    return Node(0, {}, frozenset(range(m)))


class NodeQueue:
    """Active nodes ordered by parent objective, ties broken by node id."""

    def __init__(self):
        self._heap: list[tuple[float, int, Node]] = []

    def push(self, node: Node):
        heapq.heappush(self._heap, (node.key, node.id, node))

    def pop(self) -> Node:
        return heapq.heappop(self._heap)[2]

    def min_key(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def __len__(self):
        return len(self._heap)

    def __bool__(self):
        return bool(self._heap)


@dataclass
class Incumbent:
    point: np.ndarray
    objective: float
    found_at_node: int


def select_branch_var(y_values, epsilon_int: float = 1e-5) -> int:
    """Position of the fractional entry closest to 0.5 (lowest position on ties).

    Distances within 1e-12 count as ties, so 0.3 and 0.7 tie despite rounding.
    """
    best, best_gap = None, math.inf
    for i, v in enumerate(y_values):
        if min(abs(v), abs(v - 1.0)) <= epsilon_int:
            continue
        gap = abs(v - 0.5)
        if gap < best_gap - 1e-12:
            best, best_gap = i, gap
    if best is None:
        raise NoFractional("every value is integral within tolerance")
    return best


def is_integral(y_values, epsilon_int: float = 1e-5) -> bool:
    return all(min(abs(v), abs(v - 1.0)) <= epsilon_int for v in y_values)


def should_prune(node_objective: float, f_ub: float) -> bool:
    return node_objective >= f_ub


def branch(node: Node, idx: int, parent_point, parent_objective: float, next_id: int):
    """Children of ``node`` with binary ``idx`` fixed at 0 (id ``next_id``) and 1."""
    if idx not in node.relaxed:
        raise ValueError(f"binary {idx} is not relaxed at node {node.id}")
    parent_point = np.asarray(parent_point, dtype=float)
    children = []
    for offset, target in enumerate((0, 1)):
        fixed = dict(node.fixed)
        fixed[idx] = float(target)
        children.append(
            Node(
                id=next_id + offset,
                fixed=fixed,
                relaxed=node.relaxed - {idx},
                anchor=None,
                parent_point=parent_point,
                parent_objective=parent_objective,
                depth=node.depth + 1,
            )
        )
    return tuple(children)


@dataclass(frozen=True)
class BnbOptions:
    epsilon_int: float = 1e-5
    node_limit: int = 10_000
    time_limit: float = 3600.0
    refine_time_limit: float = 3600.0
    homotopy: HomotopyOptions = field(default_factory=HomotopyOptions)
    nlp: NlpOptions = field(default_factory=NlpOptions)
    postcheck: bool = True
    polish: bool = False


@dataclass
class SolveReport:
    algorithm: str
    status: str
    incumbent: Incumbent | None
    n_node: int = 0
    n_inf: int = 0
    n_nlp: int = 0
    t_post: float = 0.0
    n_inf_post: int = 0
    n_nlp_post: int = 0
    wall_seconds: float = 0.0
    f_lb: float = -math.inf
    trace: list[dict] = field(default_factory=list)
    polish: NlpResult | None = None

    @property
    def objective(self) -> float | None:
        return None if self.incumbent is None else self.incumbent.objective

    @property
    def point(self):
        return None if self.incumbent is None else self.incumbent.point

    @property
    def polish_relative_change(self) -> float | None:
        if self.polish is None or not self.polish.ok or self.incumbent is None:
            return None
        base = self.incumbent.objective
        return abs(self.polish.objective - base) / max(abs(base), 1e-12)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "status": self.status,
            "point": None if self.point is None else [float(v) for v in self.point],
            "n_node": self.n_node,
            "n_inf": self.n_inf,
            "n_nlp": self.n_nlp,
            "t_post_seconds": self.t_post,
            "n_inf_post": self.n_inf_post,
            "n_nlp_post": self.n_nlp_post,
            "algorithm": self.algorithm,
            "wall_seconds": self.wall_seconds,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


class BranchAndBound:
    """State of one solve: queue, incumbent, counters and the stalled-node set."""

    def __init__(self, prob, algorithm, options=None, solver=solve_nlp, incumbent=None, f_ub=math.inf):
        self.prob = prob
        self.algorithm = normalize_algorithm(algorithm)
        self.options = options or BnbOptions()
        self.solver = solver
        self.variant = {HCBB_FP: FP, HCBB_RB: RB}.get(self.algorithm)
        self.refine_options = HomotopyOptions(n_max=1000, dt_min=1e-15, delta=self.options.homotopy.delta)
        self.queue = NodeQueue()
        self.history = NodeHistory()
        self.infeasible = []
        self.incumbent = incumbent
        self.f_ub = min(f_ub, incumbent.objective if incumbent else math.inf)
        self.n_node = 0
        self.n_inf = 0
        self.n_nlp = 0
        self.next_id = 1
        self.trace: list[dict] = []
        self.limit_hit = False
        self.started = time.perf_counter()

    @property
    def f_lb(self) -> float:
        return self.queue.min_key()

    def log_trace(self, node, event, objective=None, **extra):
        entry = {
            "node": node.id,
            "depth": node.depth,
            "branch_index": None if node.anchor is None else node.anchor.branch_index,
            "target": None if node.anchor is None else node.anchor.target,
            "event": event,
            "objective": objective,
            "f_ub": self.f_ub,
            "fixed": dict(node.fixed),
        }
        entry.update(extra)
        self.trace.append(entry)

    def remember(self, node, outcome):
        if node.anchor is None or not outcome.schedule:
            return
        self.history.add(
            HistoryEntry(
                node.id,
                node.anchor.branch_index,
                node.anchor.target,
                node.anchor.parent_value,
                tuple(outcome.schedule),
            )
        )

    # -- node processing ---------------------------------------------------------
    def solve_root(self, start):
        sub = relax(self.prob)
        res = self.solver(sub, start, self.options.nlp.optimize())
        self.n_nlp += 1
        self.n_node += 1
        root = root_node(self.prob.m)
        if not res.ok:
            self.log_trace(root, "root-failure", None, status=res.status.value)
            raise RootFailure(f"root relaxation not solved: {res.status.value} {res.message}".strip(), res)
        self.accept_solution(root, res, "solved")

    def process(self, node: Node):
        self.n_node += 1
        if self.variant is None:
            res = self.solver(build_nlp0(self.prob, node), node.parent_point, self.options.nlp.optimize())
            self.n_nlp += 1
            if not res.ok:
                self.n_inf += 1
                self.log_trace(node, "infeasible", None, status=res.status.value, nlp=1)
                return
            self.accept_solution(node, res, "solved", nlp=1)
            return
        outcome = run_homotopy(
            self.prob,
            node,
            self.variant,
            self.f_ub,
            self.options.homotopy,
            self.history,
            nlp_opts=self.options.nlp,
            solver=self.solver,
        )
        self.n_nlp += outcome.nlp_solve_count
        extra = {"nlp": outcome.nlp_solve_count, "calls": outcome.calls, "matched": outcome.matched}
        if outcome.kind == OutcomeKind.SOLVED:
            self.remember(node, outcome)
            self.accept_solution(node, outcome.result, "solved", **extra)
        elif outcome.kind == OutcomeKind.BOUND_PRUNED:
            self.log_trace(node, "bound-pruned-mid-path", outcome.objective, **extra)
        else:
            self.n_inf += 1
            self.infeasible.append(record_infeasible(node, outcome, self.variant))
            self.log_trace(node, "stalled", outcome.last_objective, t_v1=outcome.last_t, **extra)

    def accept_solution(self, node: Node, res: NlpResult, event: str, **extra) -> bool:
        """Prune, record an incumbent, or branch; returns True when children were queued."""
        f = res.objective
        y = self.prob.binary_values(res.point)
        eps = self.options.epsilon_int
        if should_prune(f, self.f_ub):
            self.log_trace(node, event + "/pruned", f, **extra)
            return False
        if is_integral(y, eps):
            self.incumbent = Incumbent(np.array(res.point, dtype=float), f, node.id)
            self.f_ub = f
            self.log_trace(node, event + "/incumbent", f, **extra)
            return False
        candidates = sorted(node.relaxed)
        idx = candidates[select_branch_var([y[s] for s in candidates], eps)]
        children = branch(node, idx, res.point, f, self.next_id)
        self.next_id += 2
        for child in children:
            child.anchor = HomotopyAnchor(idx, float(y[idx]), int(child.fixed[idx]))
            self.queue.push(child)
        self.log_trace(node, event + "/branched", f, branched_on=idx, **extra)
        return True

    def limits_reached(self) -> bool:
        opts = self.options
        if self.n_node >= opts.node_limit or time.perf_counter() - self.started > opts.time_limit:
            self.limit_hit = True
        return self.limit_hit

    def run_main_loop(self):
        while self.queue and not self.limits_reached():
            self.process(self.queue.pop())

    def report(self, post=None) -> SolveReport:
        if self.limit_hit or (post is not None and post.limit_hit):
            status = "Limit"
        elif self.incumbent is not None:
            status = "Optimal"
        else:
            status = "Infeasible"
        rep = SolveReport(
            algorithm=self.algorithm,
            status=status,
            incumbent=self.incumbent,
            n_node=self.n_node,
            n_inf=self.n_inf,
            n_nlp=self.n_nlp,
            wall_seconds=time.perf_counter() - self.started,
            f_lb=self.f_lb,
            trace=self.trace,
        )
        if post is not None:
            rep.t_post = post.t_post
            rep.n_inf_post = post.n_inf_post
            rep.n_nlp_post = post.n_nlp_post
        else:
            rep.n_inf_post = len(self.infeasible) if self.variant else self.n_inf
        return rep


def solve_minlp(
    prob: MinlpProblem,
    algorithm: str = HCBB_RB,
    start=None,
    opts: BnbOptions | None = None,
    *,
    solver=solve_nlp,
    incumbent: Incumbent | None = None,
    f_ub: float = math.inf,
) -> SolveReport:
    """Solve ``prob`` by branch and bound and return the incumbent with statistics.

    ``start`` defaults to the midpoint of every variable box. ``incumbent`` or
    ``f_ub`` pre-seed the upper bound. Raises :class:`RootFailure` when the root
    relaxation cannot be solved.
    """
    opts = opts or BnbOptions()
    start = prob.midpoint() if start is None else np.asarray(start, dtype=float)
    driver = BranchAndBound(prob, algorithm, opts, solver, incumbent, f_ub)
    driver.solve_root(start)
    driver.run_main_loop()
    post = None
    if driver.variant is not None and opts.postcheck and not driver.limit_hit:
        post = run_postcheck_loop(driver, opts.refine_time_limit)
    rep = driver.report(post)
    if opts.polish and rep.incumbent is not None:
        rep.polish = polish_round(prob, rep.incumbent.point, opts.epsilon_int, opts.nlp)
    return rep


def check_incumbent(prob: MinlpProblem, rep: SolveReport, opts: BnbOptions | None = None) -> bool:
    """True when the reported incumbent is integral and feasible within tolerances."""
    opts = opts or BnbOptions()
    if rep.incumbent is None:
        return False
    p = rep.incumbent.point
    return is_integral(prob.binary_values(p), opts.epsilon_int) and max_violation(
        prob, p
    ) <= opts.nlp.feasibility_tolerance

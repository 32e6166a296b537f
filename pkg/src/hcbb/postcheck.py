"""Second look at nodes whose homotopy walk stalled during branch and bound.

Stalled ``RB`` nodes whose last converged objective already exceeds the final
incumbent are dropped without any solve. Everything else is walked again from
its last converged point with a far larger iteration cap and a minimum step of
1e-15; a walk that now reaches ``t = 1`` re-enters branch and bound.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, replace

import numpy as np

from .homotopy import FP, RB, REFINE_OPTIONS, HomotopyOptions, HomotopyOutcome, OutcomeKind, run_homotopy


class Decision(str, enum.Enum):
    SKIP = "Skip"
    REFINE = "Refine"


@dataclass
class InfeasibleRecord:
    node: object
    last_point: np.ndarray
    last_objective: float | None
    t_v1: float
    dt_v2: float
    variant: str
    schedule_prefix: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.t_v1 < 1.0:
            raise ValueError(f"t_v1 = {self.t_v1} outside [0, 1)")
        if not 0.0 < self.dt_v2 <= 1.0:
            raise ValueError(f"dt_v2 = {self.dt_v2} outside (0, 1]")
        if self.variant not in (FP, RB):
            raise ValueError(f"unknown variant {self.variant!r}")


def record_infeasible(node, outcome: HomotopyOutcome, variant: str) -> InfeasibleRecord:
    if outcome.kind != OutcomeKind.STALLED:
        raise ValueError("only stalled walks are recorded")
    return InfeasibleRecord(
        node=node,
        last_point=outcome.last_point,
        last_objective=outcome.last_objective if variant == RB else None,
        t_v1=outcome.last_t,
        dt_v2=outcome.last_dt,
        variant=variant,
        schedule_prefix=outcome.schedule,
    )


def post_check(rec: InfeasibleRecord, f_ub: float) -> Decision:
    """Skip an RB record already worse than the incumbent (strict ``>``); otherwise refine."""
    if rec.variant == RB and rec.last_objective is not None and rec.last_objective > f_ub:
        return Decision.SKIP
    return Decision.REFINE


def refine(
    prob,
    rec: InfeasibleRecord,
    f_ub: float,
    *,
    opts: HomotopyOptions = REFINE_OPTIONS,
    nlp_opts=None,
    solver=None,
) -> HomotopyOutcome:
    """Resume the stalled walk at ``t_v1`` with step ``dt_v2`` under the refinement limits."""
    kwargs = {} if solver is None else {"solver": solver}
    outcome = run_homotopy(
        prob,
        rec.node,
        rec.variant,
        f_ub,
        opts,
        None,
        nlp_opts=nlp_opts,
        t0=rec.t_v1,
        dt0=rec.dt_v2,
        start=rec.last_point,
        start_objective=rec.last_objective,
        **kwargs,
    )
    if rec.schedule_prefix:
        outcome = replace(outcome, schedule=tuple(rec.schedule_prefix) + tuple(outcome.schedule))
    return outcome


@dataclass
class PostcheckStats:
    t_post: float = 0.0
    n_inf_post: int = 0
    n_nlp_post: int = 0
    skipped: int = 0
    refined: int = 0
    rebranched: int = 0
    limit_hit: bool = False


def run_postcheck_loop(driver, time_limit: float = 3600.0) -> PostcheckStats:
    """Drain ``driver.infeasible`` in ascending node id, re-entering B&B on success.

    ``driver`` is the branch-and-bound state object: it supplies the problem,
    the incumbent bound, the record set, and ``accept_solution`` /
    ``run_main_loop`` for nodes that come back to life.
    """
    stats = PostcheckStats()
    started = time.perf_counter()
    nlp_before = driver.n_nlp
    while driver.infeasible:
        driver.infeasible.sort(key=lambda r: r.node.id)
        rec = driver.infeasible.pop(0)
        f_ub = driver.f_ub
        if post_check(rec, f_ub) == Decision.SKIP:
            stats.skipped += 1
            driver.log_trace(rec.node, "postcheck-skip", rec.last_objective)
            continue
        if time.perf_counter() - started > time_limit:
            stats.limit_hit = True
            stats.n_inf_post += 1 + len(driver.infeasible)
            driver.infeasible.clear()
            break
        stats.refined += 1
        outcome = refine(
            driver.prob, rec, f_ub, opts=driver.refine_options, nlp_opts=driver.options.nlp, solver=driver.solver
        )
        driver.n_nlp += outcome.nlp_solve_count
        if outcome.kind == OutcomeKind.SOLVED:
            driver.remember(rec.node, outcome)
            branched = driver.accept_solution(rec.node, outcome.result, "postcheck-refined")
            if branched:
                stats.rebranched += 1
                driver.run_main_loop()
        elif outcome.kind == OutcomeKind.BOUND_PRUNED:
            driver.log_trace(rec.node, "postcheck-bound-pruned", outcome.objective)
        else:
            stats.n_inf_post += 1
            driver.log_trace(rec.node, "postcheck-stalled", None)
    stats.t_post = time.perf_counter() - started
    stats.n_nlp_post = driver.n_nlp - nlp_before
    return stats


__all__ = [
    "Decision",
    "InfeasibleRecord",
    "PostcheckStats",
    "post_check",
    "record_infeasible",
    "refine",
    "run_postcheck_loop",
]

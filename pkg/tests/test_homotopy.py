import math

import numpy as np
import pytest

from hcbb.bench import narrow_channel_problem
from hcbb.bnb import Node
from hcbb.errors import RangeError
from hcbb.homotopy import (
    FP,
    RB,
    HistoryEntry,
    HomotopyAnchor,
    HomotopyOptions,
    HomotopyState,
    NodeHistory,
    OutcomeKind,
    build_nlp0,
    build_nlpfp,
    build_nlpfx,
    build_nlprb,
    find_match,
    fixed_vector,
    homotopy_value,
    next_on_failure,
    next_on_success,
    rb_box,
    run_homotopy,
)
from hcbb.model import relax
from hcbb.nlp import NlpOptions, solve_nlp


def child(target=1, parent_value=0.4, index=0, fixed=None, point=(0.35, 0.35), objective=0.2375, node_id=2):
    fixed = dict(fixed or {})
    fixed[index] = float(target)
    return Node(
        id=node_id,
        fixed=fixed,
        relaxed=frozenset(),
        anchor=HomotopyAnchor(index, parent_value, target),
        parent_point=np.array(point, dtype=float),
        parent_objective=objective,
        depth=1,
    )


# --- interpolation --------------------------------------------------------------------------


def test_homotopy_value_examples():
    a = HomotopyAnchor(0, 0.4, 1)
    assert homotopy_value(a, 0.5) == pytest.approx(0.7)
    assert homotopy_value(a, 0.0) == 0.4
    assert homotopy_value(HomotopyAnchor(0, 0.4, 0), 1.0) == 0.0


@pytest.mark.parametrize("t", [-0.1, 1.5, math.nan])
def test_homotopy_value_range(t):
    with pytest.raises(RangeError):
        homotopy_value(HomotopyAnchor(0, 0.4, 1), t)


def test_fixed_vector_examples():
    a = HomotopyAnchor(1, 0.6, 0)
    np.testing.assert_allclose(fixed_vector([1.0, 0.0], a, 0.5), [1.0, 0.3])
    np.testing.assert_array_equal(fixed_vector([1.0, 0.0], a, 1.0), [1.0, 0.0])
    np.testing.assert_array_equal(fixed_vector([1.0, 0.0], a, 0.0), [1.0, 0.6])
    assert fixed_vector({0: 1.0, 1: 0.0}, a, 0.5) == {0: 1.0, 1: pytest.approx(0.3)}


def test_anchor_validation():
    with pytest.raises(ValueError):
        HomotopyAnchor(0, 1.0, 1)
    with pytest.raises(ValueError):
        HomotopyAnchor(0, 0.5, 2)


def test_rb_box_examples():
    assert rb_box(HomotopyAnchor(0, 0.4, 1), 0.25) == (pytest.approx(0.55), 1.0)
    assert rb_box(HomotopyAnchor(0, 0.4, 0), 0.5) == (0.0, pytest.approx(0.2))
    assert rb_box(HomotopyAnchor(0, 0.4, 1), 1.0) == (1.0, 1.0)


# --- subproblem builders -------------------------------------------------------------------


def test_builders_at_endpoints(worked):
    node = child(target=1, parent_value=0.35)
    fx1 = build_nlpfx(worked, node, 1.0)
    nlp0 = build_nlp0(worked, node)
    assert fx1.variables == nlp0.variables
    assert build_nlprb(worked, node, 1.0).variables == nlp0.variables
    fx0 = build_nlpfx(worked, node, 0.0)
    assert fx0.variables[1].lower == fx0.variables[1].upper == 0.35
    assert build_nlpfx(worked, node, 0.5).variables[1].lower == pytest.approx(0.675)
    assert build_nlpfp(worked, node, 0.5).objective_value(np.array([0.2, 0.675])) == 0.0
    rb = build_nlprb(worked, node, 0.5)
    assert (rb.variables[1].lower, rb.variables[1].upper) == (pytest.approx(0.675), 1.0)


def test_parent_optimum_solves_the_t0_problem(worked):
    parent = solve_nlp(relax(worked), worked.midpoint())
    node = child(target=1, parent_value=float(parent.point[1]), point=parent.point, objective=parent.objective)
    at_zero = solve_nlp(build_nlpfx(worked, node, 0.0), parent.point)
    assert at_zero.objective == pytest.approx(parent.objective, abs=1e-7)
    fp_zero = solve_nlp(build_nlpfp(worked, node, 0.0), parent.point, NlpOptions().feasibility_only())
    assert fp_zero.inner_iterations == 0


def test_nlprb_at_one_matches_nlp0(worked):
    node = child(target=1, parent_value=0.35)
    a = solve_nlp(build_nlprb(worked, node, 1.0), node.parent_point)
    b = solve_nlp(build_nlp0(worked, node), node.parent_point)
    assert a.status == b.status
    assert abs(a.objective - b.objective) <= 1e-6


def test_builders_need_an_anchor(worked):
    with pytest.raises(ValueError):
        build_nlprb(worked, Node(0, {}, frozenset({0})), 0.5)


# --- step-length rules ---------------------------------------------------------------------


def _state(dts, ts, t_success=0.0):
    s = HomotopyState(dt_values=list(dts), t_values=list(ts), t_success=t_success)
    s.nu = len(ts) - 1
    return s


def test_success_keeps_unequal_step():
    assert next_on_success(_state([1.0, 0.5, 0.25], [0, 1, 0.5, 0.25])) == (0.25, 0.5)


def test_success_doubles_after_two_equal_steps():
    assert next_on_success(_state([1.0, 0.5, 0.25, 0.25], [0, 1, 0.5, 0.25, 0.5])) == (0.5, 1.0)


def test_success_caps_at_one():
    dt, t = next_on_success(_state([1.0, 0.5], [0.0, 1.0, 0.9]))
    assert (dt, t) == (0.5, 1.0)


def test_first_success_keeps_initial_step():
    assert next_on_success(_state([1.0], [0.0, 0.6])) == (1.0, 1.0)


def test_failure_halves_from_last_success():
    assert next_on_failure(_state([1.0], [0.0, 1.0])) == (0.5, 0.5)
    assert next_on_failure(_state([1.0, 0.5, 0.25], [0, 1, 0.5, 0.25, 0.5], t_success=0.25)) == (0.125, 0.375)


def test_homotopy_options_validation():
    with pytest.raises(ValueError):
        HomotopyOptions(n_max=1)
    with pytest.raises(ValueError):
        HomotopyOptions(dt_min=0.0)
    with pytest.raises(ValueError):
        HomotopyOptions(delta=0.0)


# --- scripted walks ---------------------------------------------------------------------------


def _ts(outcome):
    return [t for t, status in outcome.calls if not status.startswith("NLP0")]


def test_direct_success_rb(worked, scripted):
    solver = scripted(["Optimal"], [0.5])
    out = run_homotopy(worked, child(), RB, solver=solver)
    assert out.kind == OutcomeKind.SOLVED
    assert out.nlp_solve_count == 1 == len(solver.calls)
    assert out.schedule == ((1.0, 1.0),)


def test_direct_success_fp_adds_final_solve(worked, scripted):
    solver = scripted(["Feasible", "Optimal"], [0.0, 0.5])
    out = run_homotopy(worked, child(), FP, solver=solver)
    assert out.kind == OutcomeKind.SOLVED
    assert out.nlp_solve_count == 2 == len(solver.calls)
    assert out.calls[-1] == (1.0, "NLP0:Optimal")
    assert out.objective == 0.5


def test_failure_at_one_retreats_to_half(worked, scripted):
    solver = scripted(["Infeasible", "Optimal", "Optimal"])
    out = run_homotopy(worked, child(), RB, solver=solver)
    assert _ts(out) == [1.0, 0.5, 1.0]
    assert out.schedule == ((0.5, 0.5), (1.0, 0.5))
    # every retry starts from the last converged point (here the parent point)
    np.testing.assert_array_equal(solver.calls[1][1], solver.calls[0][1])


def test_two_equal_steps_double(worked, scripted):
    solver = scripted(["Infeasible", "Infeasible", "Optimal", "Optimal", "Optimal"])
    out = run_homotopy(worked, child(), RB, solver=solver)
    assert _ts(out) == [1.0, 0.5, 0.25, 0.5, 1.0]
    assert out.kind == OutcomeKind.SOLVED


def test_mixed_failure_after_success(worked, scripted):
    solver = scripted(["Infeasible", "Infeasible", "Optimal", "Infeasible", "Optimal", "Optimal", "Optimal", "Optimal"])
    out = run_homotopy(worked, child(), RB, solver=solver)
    # 0.25 ok with dt 0.25; 0.5 fails -> dt 0.125 from 0.25; 0.375 ok; dts (0.25, 0.125) differ -> 0.5;
    # 0.5 ok, dts (0.125, 0.125) equal -> 0.25 -> 0.75; dts (0.125, 0.25) differ -> 1.0
    assert _ts(out) == [1.0, 0.5, 0.25, 0.5, 0.375, 0.5, 0.75, 1.0]


def test_step_below_minimum_stalls(worked, scripted):
    solver = scripted(["Infeasible"] * 7)
    out = run_homotopy(worked, child(), RB, solver=solver)
    assert _ts(out) == [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625]
    assert out.kind == OutcomeKind.STALLED
    assert out.last_dt == pytest.approx(0.0078125)
    assert out.last_t == 0.0


def test_iteration_cap_stalls(worked, scripted):
    # the loop runs while nu < N, so N = 3 allows two solves
    out = run_homotopy(worked, child(), RB, opts=HomotopyOptions(n_max=3), solver=scripted(["Infeasible"] * 2))
    assert out.kind == OutcomeKind.STALLED and out.nlp_solve_count == 2


def test_stall_snapshot_is_last_success(worked, scripted):
    solver = scripted(["Infeasible", "Optimal"] + ["Infeasible"] * 6, [0, 0.42] + [0] * 6)
    out = run_homotopy(worked, child(), RB, solver=solver)
    assert out.kind == OutcomeKind.STALLED
    assert out.last_t == 0.5 and out.last_objective == 0.42


def test_rb_prunes_on_intermediate_objective(worked, scripted):
    solver = scripted(["Infeasible", "Infeasible", "Optimal"], [0, 0, 0.687])
    out = run_homotopy(worked, child(), RB, f_ub=0.614, solver=solver)
    assert out.kind == OutcomeKind.BOUND_PRUNED
    assert out.objective == 0.687 and out.nlp_solve_count == 3


def test_fp_never_prunes_mid_path(worked, scripted):
    solver = scripted(["Infeasible", "Feasible", "Feasible", "Optimal"], [0, 0, 0, 0.9])
    out = run_homotopy(worked, child(), FP, f_ub=0.1, solver=solver)
    assert out.kind == OutcomeKind.SOLVED and out.nlp_solve_count == 4


def test_narrow_channel_path_one_half_one():
    prob = narrow_channel_problem(3.5, 0.55)
    parent = solve_nlp(relax(prob), prob.midpoint())
    assert parent.point[1] == pytest.approx(0.55, abs=1e-6)
    node = child(target=1, parent_value=float(parent.point[1]), point=parent.point, objective=parent.objective)
    out = run_homotopy(prob, node, RB)
    assert out.kind == OutcomeKind.SOLVED
    assert out.calls == [(1.0, "Infeasible"), (0.5, "Optimal"), (1.0, "Optimal")]
    assert out.nlp_solve_count == 3


# --- schedule matching ---------------------------------------------------------------------


def _history(*entries):
    h = NodeHistory()
    for e in entries:
        h.add(e)
    return h


def test_find_match_examples():
    node = child(target=1, parent_value=0.48, index=3)
    near = HistoryEntry(5, 3, 1, 0.52, ((1.0, 1.0),))
    assert find_match(node, _history(near), 0.1) is near
    far = HistoryEntry(6, 3, 1, 0.9, ((1.0, 1.0),))
    assert find_match(node, _history(far), 0.1) is None
    closest = HistoryEntry(7, 3, 1, 0.49, ((1.0, 1.0),))
    assert find_match(node, _history(near, closest), 0.1) is closest
    other_target = HistoryEntry(8, 3, 0, 0.48, ((1.0, 1.0),))
    other_index = HistoryEntry(9, 2, 1, 0.48, ((1.0, 1.0),))
    assert find_match(node, _history(other_target, other_index), 0.1) is None


def test_history_rejects_incomplete_schedules():
    with pytest.raises(ValueError):
        NodeHistory().add(HistoryEntry(1, 0, 1, 0.5, ((0.5, 0.5),)))
    with pytest.raises(ValueError):
        NodeHistory().add(HistoryEntry(1, 0, 1, 0.5, ((0.5, 0.5), (0.5, 0.0), (1.0, 0.5))))


def test_replay_reproduces_recorded_schedule(worked, scripted):
    recorded = ((0.25, 0.25), (0.5, 0.25), (1.0, 0.5))
    history = _history(HistoryEntry(9, 0, 1, 0.42, recorded))
    solver = scripted(["Optimal"] * 3)
    out = run_homotopy(worked, child(parent_value=0.4), RB, history=history, solver=solver)
    assert _ts(out) == [0.25, 0.5, 1.0]
    assert out.schedule == recorded
    assert out.matched == 9


def test_replay_failure_falls_back_to_adaptive_rule(worked, scripted):
    recorded = ((0.5, 0.5), (1.0, 0.5))
    history = _history(HistoryEntry(9, 0, 1, 0.42, recorded))
    solver = scripted(["Optimal", "Infeasible", "Optimal", "Optimal"])
    out = run_homotopy(worked, child(parent_value=0.4), RB, history=history, solver=solver)
    # replay 0.5 ok, replay 1.0 fails -> half the recorded step from 0.5 -> 0.75,
    # then the adaptive rule keeps 0.25 -> 1.0
    assert _ts(out) == [0.5, 1.0, 0.75, 1.0]
    assert out.kind == OutcomeKind.SOLVED


def test_no_match_outside_delta_uses_plain_walk(worked, scripted):
    history = _history(HistoryEntry(9, 0, 1, 0.8, ((0.5, 0.5), (1.0, 0.5))))
    out = run_homotopy(worked, child(parent_value=0.4), RB, history=history, solver=scripted(["Optimal"]))
    assert _ts(out) == [1.0] and out.matched is None


def test_resume_skips_matching(worked, scripted):
    history = _history(HistoryEntry(9, 0, 1, 0.4, ((0.5, 0.5), (1.0, 0.5))))
    out = run_homotopy(
        worked, child(parent_value=0.4), RB, history=history, solver=scripted(["Optimal", "Optimal"]), t0=0.6, dt0=0.2
    )
    assert _ts(out) == [pytest.approx(0.8), 1.0]
    assert out.matched is None

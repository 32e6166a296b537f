import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcbb.errors import DomainError
from hcbb.model.expr import postorder
from hcbb.model import Binary, Const, Unary, Var, compile_functions, evaluate, exp, gradient, log, sabs, sqrt, to_text


def test_product_value_and_gradient():
    e = Var(0) ** 2 * Var(1)
    assert evaluate(e, [2.0, 3.0]) == 12.0
    np.testing.assert_allclose(gradient(e, [2.0, 3.0]), [12.0, 4.0])


def test_constant_has_zero_gradient():
    assert evaluate(Const(5.0), [1.0, 2.0]) == 5.0
    np.testing.assert_array_equal(gradient(Const(5.0), [1.0, 2.0]), [0.0, 0.0])


def test_exp_plus_var_gradient():
    np.testing.assert_allclose(gradient(exp(Var(0)) + Var(1), [0.0, 1.0]), [1.0, 1.0])


@pytest.mark.parametrize(
    "expr, point",
    [
        (log(Var(0)), [0.0]),
        (log(Var(0)), [-1.0]),
        (sqrt(Var(0)), [-0.5]),
        (Const(1.0) / Var(0), [0.0]),
    ],
)
def test_domain_errors_are_raised(expr, point):
    with pytest.raises(DomainError):
        evaluate(expr, point)


def test_domain_error_names_the_node():
    e = Var(1) + log(Var(0))
    with pytest.raises(DomainError) as info:
        evaluate(e, [0.0, 1.0])
    assert info.value.node == log(Var(0))


def test_compiled_matches_tree_walk():
    exprs = [Var(0) ** 2 * Var(1), exp(Var(0)) + Var(1), sabs(Var(0) - Var(1)) / (1 + Var(1) ** 2)]
    fns = compile_functions(exprs, 2)
    x = np.array([0.3, -1.7])
    values, jac = fns.values_and_jacobian(x)
    np.testing.assert_allclose(values, [evaluate(e, x) for e in exprs], rtol=1e-14)
    np.testing.assert_allclose(jac, [gradient(e, x) for e in exprs], rtol=1e-12)


def test_compiled_raises_domain_error():
    fns = compile_functions([log(Var(0))], 1)
    with pytest.raises(DomainError):
        fns.values(np.array([-1.0]))


def test_operator_overloads_build_nodes():
    e = 2 - Var(0)
    assert e == Binary("sub", Const(2.0), Var(0))
    assert -Var(0) == Unary("neg", Var(0))


@pytest.mark.parametrize(
    "expr, text",
    [
        ((Var(0) - 0.6) ** 2 + 0.5 * Var(1), "(x - 0.6)^2.0 + 0.5 * y"),
        (Var(0) - (Var(1) - Var(0)), "x - (y - x)"),
        (-(Var(0) + Var(1)), "-(x + y)"),
        (Var(0) ** Var(1) ** 2, "x^y^2.0"),
    ],
)
def test_to_text(expr, text):
    assert to_text(expr, ["x", "y"]) == text


def test_invalid_nodes_rejected():
    with pytest.raises(ValueError):
        Var(-1)
    with pytest.raises(ValueError):
        Const(math.inf)
    with pytest.raises(ValueError):
        Unary("sin", Var(0))


def test_evaluate_is_bit_identical():
    e = exp(Var(0) * Var(1)) / (1 + Var(0) ** 2)
    assert evaluate(e, [0.7, 0.2]) == evaluate(e, [0.7, 0.2])


# --- random expressions for the finite-difference property ----------------------------


def _leaf(nvars):
    return st.one_of(
        st.integers(0, nvars - 1).map(Var),
        st.floats(-2.0, 2.0, allow_nan=False).map(Const),
    )


def random_exprs(nvars=3):
    def extend(children):
        safe_unary = st.one_of(
            children.map(lambda a: Unary("neg", a)),
            children.map(lambda a: exp(0.3 * a)),
            children.map(lambda a: log(1.5 + sabs(a))),
            children.map(lambda a: sqrt(1.0 + a * a)),
            children.map(sabs),
        )
        pairs = st.tuples(children, children)
        safe_binary = st.one_of(
            pairs.map(lambda p: p[0] + p[1]),
            pairs.map(lambda p: p[0] - p[1]),
            pairs.map(lambda p: p[0] * p[1]),
            pairs.map(lambda p: p[0] / (1.0 + p[1] * p[1])),
            children.map(lambda a: a**2),
            children.map(lambda a: a**3),
        )
        return st.one_of(safe_unary, safe_binary)

    return st.recursive(_leaf(nvars), extend, max_leaves=8)


def _fd_gradient(expr, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (evaluate(expr, up) - evaluate(expr, down)) / (2 * h)
    return g


@settings(max_examples=1000, deadline=None)
@given(random_exprs(), st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3))
def test_gradient_matches_central_differences(expr, point):
    x = np.array(point)
    exact = gradient(expr, x)
    approx = _fd_gradient(expr, x)
    # absolute floor covers cancellation in the difference quotient; sabs is
    # smooth on a 1e-6 scale, so points right at its kink are excluded
    scale = max(1.0, float(np.abs(exact).max()), abs(evaluate(expr, x)))
    if any(isinstance(n, Unary) and n.op == "sabs" and abs(evaluate(n.arg, x)) < 1e-3 for n in postorder(expr)):
        return
    assert np.all(np.abs(exact - approx) <= 1e-5 * scale)

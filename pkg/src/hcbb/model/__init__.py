"""Problem representation: expressions, MINLP container, transforms and text format."""

from .expr import (
    Binary,
    Const,
    Expr,
    Unary,
    Var,
    compile_functions,
    evaluate,
    exp,
    gradient,
    log,
    sabs,
    sqrt,
    to_text,
    total,
)
from .parser import load_problem, parse_problem, print_problem
from .problem import (
    BINARY,
    CONTINUOUS,
    MinlpProblem,
    Point,
    VariableSpec,
    binary,
    continuous,
    fix_and_bound,
    max_violation,
    relax,
)

__all__ = [
    "BINARY",
    "CONTINUOUS",
    "Binary",
    "Const",
    "Expr",
    "MinlpProblem",
    "Point",
    "Unary",
    "Var",
    "VariableSpec",
    "binary",
    "compile_functions",
    "continuous",
    "evaluate",
    "exp",
    "fix_and_bound",
    "gradient",
    "load_problem",
    "log",
    "max_violation",
    "parse_problem",
    "print_problem",
    "relax",
    "sabs",
    "sqrt",
    "to_text",
    "total",
]

"""Homotopy-continuation enhanced branch and bound for small MINLPs."""

from .bnb import ALGORITHMS, BB, HCBB_FP, HCBB_RB, BnbOptions, SolveReport, solve_minlp
from .model import load_problem

__version__ = "0.1.0"

__all__ = ["ALGORITHMS", "BB", "HCBB_FP", "HCBB_RB", "BnbOptions", "SolveReport", "load_problem", "solve_minlp"]

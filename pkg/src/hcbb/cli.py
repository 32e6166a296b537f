"""Command-line front end: ``hcbb solve | oracle | bench``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import SUITES, BenchmarkOptions, brute_force_solve, run_benchmark, start_point, suite_instances
from .bnb import ALGORITHMS, BnbOptions, normalize_algorithm, solve_minlp
from .errors import ParseError, RootFailure, SemanticError, TooManyBinaries
from .homotopy import HomotopyOptions
from .model import load_problem

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _bounded(name, lo, hi, cast=float, lo_open=True, hi_open=True):
    def check(text):
        try:
            value = cast(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        below = value <= lo if lo_open else value < lo
        above = value >= hi if hi_open else value > hi
        if below or above:
            left = "(" if lo_open else "["
            right = ")" if hi_open else "]"
            raise argparse.ArgumentTypeError(f"{name} must lie in {left}{lo}, {hi}{right}, got {value}")
        return value

    return check


def _start_strategy(text):
    if text == "midpoint" or text.startswith("file:"):
        return text
    if text.startswith("random:"):
        try:
            int(text.split(":", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"random start needs an integer seed, got {text!r}") from None
        return text
    raise argparse.ArgumentTypeError("start must be midpoint, file:<path> or random:<seed>")


def _algorithm_list(text):
    try:
        return [normalize_algorithm(a) for a in text.split(",") if a.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_knobs(p):
    inf = float("inf")
    p.add_argument("--dt-min", type=_bounded("--dt-min", 0.0, 1.0), default=0.01,
                   help="smallest homotopy step before a node counts as stalled (default 0.01)")
    p.add_argument("--delta-match", type=_bounded("--delta-match", 0.0, 1.0, hi_open=False), default=0.1,
                   help="largest parent-value gap for reusing a step schedule (default 0.1)")
    p.add_argument("--int-tol", type=_bounded("--int-tol", 0.0, 0.5), default=1e-5,
                   help="integrality tolerance (default 1e-5)")
    p.add_argument("--max-steps", type=_bounded("--max-steps", 0, inf, int), default=50,
                   help="homotopy solve cap per node (default 50)")
    p.add_argument("--node-limit", type=_bounded("--node-limit", 0, inf, int), default=10_000)
    p.add_argument("--time-limit", type=_bounded("--time-limit", 0.0, inf), default=3600.0, help="seconds")
    p.add_argument("--polish", action="store_true", help="round and re-solve the incumbent")
    p.add_argument("--output", choices=("json", "table"), default="table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hcbb", description="MINLP branch and bound with homotopy child solves")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve a problem file")
    solve.add_argument("file")
    solve.add_argument("--algorithm", type=normalize_algorithm_arg, default="HCBB-RB",
                       help="bb, hcbb-fp or hcbb-rb (default hcbb-rb)")
    solve.add_argument("--start", type=_start_strategy, default="midpoint",
                       help="midpoint, file:<path> or random:<seed>")
    _add_knobs(solve)

    oracle = sub.add_parser("oracle", help="enumerate every binary assignment")
    oracle.add_argument("file")
    oracle.add_argument("--multistarts", type=_bounded("--multistarts", 0, float("inf"), int), default=5)
    oracle.add_argument("--output", choices=("json", "table"), default="table")

    bench = sub.add_parser("bench", help="run a benchmark suite against the oracle")
    bench.add_argument("suite", choices=SUITES)
    bench.add_argument("--algorithm", type=_algorithm_list, default=list(ALGORITHMS),
                       help="comma-separated list (default all three)")
    bench.add_argument("--start", type=str, default="midpoint",
                       help="comma-separated start strategies: midpoint, random:<seed>")
    bench.add_argument("--count", type=_bounded("--count", 0, float("inf"), int), default=None,
                       help="number of generated instances for random suites")
    bench.add_argument("--multistarts", type=_bounded("--multistarts", 0, float("inf"), int), default=5)
    bench.add_argument("--jobs", type=_bounded("--jobs", 0, float("inf"), int), default=1)
    _add_knobs(bench)
    return parser


def normalize_algorithm_arg(text):
    try:
        return normalize_algorithm(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _bnb_options(args) -> BnbOptions:
    return BnbOptions(
        epsilon_int=args.int_tol,
        node_limit=args.node_limit,
        time_limit=args.time_limit,
        homotopy=HomotopyOptions(n_max=args.max_steps, dt_min=args.dt_min, delta=args.delta_match),
        polish=args.polish,
    )


def _read_start(prob, strategy):
    if strategy.startswith("file:"):
        values = np.loadtxt(strategy.split(":", 1)[1], dtype=float, ndmin=1)
        if values.shape != (prob.num_vars,):
            raise ValueError(f"start file has {values.size} values, problem has {prob.num_vars} variables")
        return values
    return start_point(prob, strategy)


def _print_mapping(data: dict, out):
    width = max(len(k) for k in data)
    for key, value in data.items():
        out.write(f"{key.ljust(width)}  {value}\n")


def _cmd_solve(args, out) -> int:
    prob = load_problem(args.file)
    start = _read_start(prob, args.start)
    try:
        rep = solve_minlp(prob, args.algorithm, start, _bnb_options(args))
    except RootFailure as exc:
        sys.stderr.write(f"hcbb: {exc}\n")
        return EXIT_FAIL
    data = rep.to_dict()
    if rep.polish is not None:
        data["polish_status"] = rep.polish.status.value
        data["polish_objective"] = rep.polish.objective
        data["polish_relative_change"] = rep.polish_relative_change
    if args.output == "json":
        out.write(json.dumps(data) + "\n")
    else:
        if data["point"] is not None:
            data["point"] = " ".join(f"{n}={v:.8g}" for n, v in zip(prob.names, data["point"]))
        _print_mapping(data, out)
    return EXIT_OK if rep.status == "Optimal" else EXIT_FAIL


def _cmd_oracle(args, out) -> int:
    prob = load_problem(args.file)
    res = brute_force_solve(prob, args.multistarts)
    data = res.to_dict()
    if args.output == "json":
        out.write(json.dumps(data) + "\n")
    else:
        data["statuses"] = " ".join(f"{k}:{v}" for k, v in data["statuses"].items())
        _print_mapping(data, out)
    return EXIT_OK if res.objective is not None else EXIT_FAIL


def _cmd_bench(args, out) -> int:
    starts = tuple(_start_strategy(s) for s in args.start.split(","))
    if any(s.startswith("file:") for s in starts):
        raise ValueError("bench starts must be midpoint or random:<seed>")
    opts = BenchmarkOptions(_bnb_options(args), starts, args.multistarts, args.jobs)
    rep = run_benchmark(suite_instances(args.suite, args.count), args.algorithm, opts)
    out.write((rep.to_json() if args.output == "json" else rep.to_table()) + "\n")
    return EXIT_OK


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {"solve": _cmd_solve, "oracle": _cmd_oracle, "bench": _cmd_bench}[args.command]
    try:
        return handler(args, out)
    except (OSError, ParseError, SemanticError, TooManyBinaries, ValueError, argparse.ArgumentTypeError) as exc:
        sys.stderr.write(f"hcbb: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Benchmark harness: enumeration oracle, instance generators and comparison reports."""

from __future__ import annotations

import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .bnb import ALGORITHMS, BnbOptions, normalize_algorithm, solve_minlp
from .errors import RootFailure, TooManyBinaries
from .model.expr import Const, Expr, Var, total
from .model.problem import MinlpProblem, binary, continuous, fix_and_bound
from .nlp import NlpOptions, solve_nlp

ORACLE_MAX_BINARIES = 16
FAMILIES = ("convex_qp", "nonconvex_poly", "narrow_channel")

K1 = 0.412  # h^-1, A -> B
K2 = 0.055  # h^-1, B -> C


# --------------------------------------------------------------------------
# oracle


@dataclass
class OracleResult:
    objective: float | None
    assignment: tuple[int, ...] | None
    point: np.ndarray | None = None
    statuses: dict[tuple[int, ...], str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "assignment": None if self.assignment is None else list(self.assignment),
            "point": None if self.point is None else [float(v) for v in self.point],
            "statuses": {"".join(map(str, k)): v for k, v in self.statuses.items()},
        }


def oracle_starts(prob: MinlpProblem, count: int) -> np.ndarray:
    """Box midpoint followed by unscrambled Halton points scaled to the box."""
    lo, hi = prob.lower, prob.upper
    starts = [prob.midpoint()]
    if count > 1:
        sample = qmc.Halton(d=prob.num_vars, scramble=False).random(count)[1:]
        starts.extend(lo + s * (hi - lo) for s in sample)
    return np.array(starts[:count])


def brute_force_solve(prob: MinlpProblem, multistarts: int = 5, opts: NlpOptions | None = None) -> OracleResult:
    """Best objective over every binary assignment, each solved from ``multistarts`` starts."""
    if prob.m > ORACLE_MAX_BINARIES:
        raise TooManyBinaries(f"{prob.m} binaries exceed the enumeration limit of {ORACLE_MAX_BINARIES}")
    if multistarts < 1:
        raise ValueError("multistarts must be at least 1")
    opts = (opts or NlpOptions()).optimize()
    best = OracleResult(None, None)
    starts = oracle_starts(prob, multistarts)
    for assignment in itertools.product((0, 1), repeat=prob.m):
        sub = fix_and_bound(prob, dict(enumerate(assignment)))
        status = "Infeasible"
        for start in starts:
            res = solve_nlp(sub, start, opts)
            if not res.ok:
                if status == "Infeasible":
                    status = res.status.value
                continue
            status = "Optimal"
            if best.objective is None or res.objective < best.objective:
                best.objective = float(res.objective)
                best.assignment = assignment
                best.point = res.point
        best.statuses[assignment] = status
    return best


# --------------------------------------------------------------------------
# generators


def _dot(coefs, zs) -> Expr:
    return total(float(c) * z for c, z in zip(coefs, zs) if c != 0.0)


def _convex_qp(rng, n, m) -> MinlpProblem:
    nv = n + m
    variables = [continuous(f"x{i + 1}", -2.0, 2.0) for i in range(n)] + [binary(f"y{j + 1}") for j in range(m)]
    z = [Var(i) for i in range(nv)]
    rows = rng.normal(size=(nv, nv)) / math.sqrt(nv)
    c = rng.normal(scale=2.0, size=nv)
    objective = total(
        [0.5 * _dot(r, z) ** 2 for r in rows] + [0.25 * zi**2 for zi in z] + [_dot(c, z)]
    )
    anchor = np.concatenate([rng.uniform(-1.5, 1.5, n), rng.integers(0, 2, m)])
    inequalities = []
    for _ in range(int(rng.integers(1, 4))):
        a = np.round(rng.normal(size=nv), 3)
        b = float(a @ anchor + rng.uniform(0.0, 0.5))
        inequalities.append(_dot(a, z) - b)
    return MinlpProblem(variables, objective, [], inequalities)


def _nonconvex_poly(rng, n, m) -> MinlpProblem:
    variables = [continuous(f"x{i + 1}", -2.0, 2.0) for i in range(n)] + [binary(f"y{j + 1}") for j in range(m)]
    x = [Var(i) for i in range(n)]
    y = [Var(n + j) for j in range(m)]
    terms = []
    for xi in x:
        alpha, beta = rng.uniform(0.2, 1.0), rng.uniform(0.5, 2.0)
        terms.append(alpha * xi**4 - beta * xi**2 + float(rng.normal(scale=0.3)) * xi)
    for xi, yj in itertools.product(x, y):
        if rng.random() < 0.5:
            terms.append(float(rng.normal()) * xi * yj)
    terms.extend(float(rng.uniform(-1.0, 1.0)) * yj for yj in y)
    inequalities = []
    if x:
        inequalities.append(total(xi**2 for xi in x) - float(n) * 1.5)
    for j, yj in enumerate(y):
        if x:
            inequalities.append(x[j % n] - 1.0 - yj)
    if m > 1:
        inequalities.append(total(y) - float(m - 1))
    return MinlpProblem(variables, total(terms), [], inequalities)


def channel_cubic(u: Expr) -> Expr:
    """``u^3 - 3u + 2.5``: one real root near -2.05, a spurious local minimum at u = 1."""
    return u**3 - 3.0 * u + 2.5


def channel_root() -> float:
    roots = np.roots([1.0, 0.0, -3.0, 2.5])
    return float(min(r.real for r in roots if abs(r.imag) < 1e-12))


def narrow_channel_problem(
    gain: float,
    center: float,
    weight: float = 1.0,
    fillers_x: int = 0,
    fillers_y: int = 0,
    rng=None,
) -> MinlpProblem:
    """Hard binary ``y1`` tied to ``x1`` through ``channel_cubic(x1 + gain*y1) = 0``.

    The relaxation puts ``y1`` at ``center`` (just above 0.5), so ``y1`` is
    branched first. Jumping straight to ``y1 = 1`` from the parent shifts the
    cubic's argument by ``gain*(1 - center)`` past its local maximum and the
    local solver slides into the spurious minimum; half that shift does not.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    # midpoint start satisfies the channel at y1 = 0.5; the upper bound keeps
    # x1 + gain*y1 left of the cubic's local maximum whenever y1 = 0
    mid = channel_root() - 0.5 * gain
    half = 2.4
    variables = [continuous("x1", mid - half, mid + half)]
    variables += [continuous(f"x{i + 2}", -1.0, 2.0) for i in range(fillers_x)]
    variables += [binary("y1")] + [binary(f"y{j + 2}") for j in range(fillers_y)]
    nx = 1 + fillers_x
    xc, yh = Var(0), Var(nx)
    terms = [weight * (yh - center) ** 2]
    inequalities = []
    for i in range(fillers_x):
        target = float(rng.uniform(0.5, 1.5))
        terms.append((Var(1 + i) - target) ** 2)
        if fillers_y:
            inequalities.append(Var(1 + i) - 0.5 - Var(nx + 1 + i % fillers_y))
    for j in range(fillers_y):
        low = rng.random() < 0.5
        b = float(rng.uniform(0.05, 0.2) if low else rng.uniform(0.8, 0.95))
        terms.append(float(rng.uniform(0.5, 1.5)) * (Var(nx + 1 + j) - b) ** 2)
    return MinlpProblem(variables, total(terms), [channel_cubic(xc + gain * yh)], inequalities)


def _narrow_channel(rng, n, m) -> MinlpProblem:
    if n < 1 or m < 1:
        raise ValueError("narrow_channel needs n >= 1 and m >= 1")
    gain = float(rng.uniform(3.2, 3.8))
    center = float(rng.uniform(0.52, 0.58))
    weight = float(rng.uniform(1.0, 2.0))
    return narrow_channel_problem(gain, center, weight, n - 1, m - 1, rng)


_GENERATORS = {"convex_qp": _convex_qp, "nonconvex_poly": _nonconvex_poly, "narrow_channel": _narrow_channel}


def generate_instance(seed: int, n: int, m: int, family: str) -> MinlpProblem:
    """Deterministic random instance with ``n`` continuous and ``m`` binary variables."""
    if family not in _GENERATORS:
        raise ValueError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    if not (0 <= n <= 12 and 0 <= m <= 8):
        raise ValueError("generators need n <= 12 and m <= 8")
    rng = np.random.default_rng([seed, n, m, FAMILIES.index(family)])
    return _GENERATORS[family](rng, n, m)


def reactor_network_instance(
    conversion: float = 0.9,
    stage_costs=(3.0, 3.1, 3.2),
    max_volume: float = 25.0,
    min_yield: float = 0.0,
) -> MinlpProblem:
    """Three optional CSTRs in series converting A -> B -> C at unit feed flow.

    Variables: stage volumes ``V1..V3`` (hours of residence time at unit
    flow), outlet concentrations of A and B, and stage existence binaries.
    Cost is total volume plus the fixed cost of each installed stage; the
    outlet must reach ``conversion`` of A and at least ``min_yield`` of B.
    A skipped stage has zero volume and passes its feed through unchanged.
    """
    if not 0.0 <= conversion < 1.0:
        raise ValueError("conversion must lie in [0, 1)")
    variables = [continuous(f"V{i}", 0.0, max_volume) for i in (1, 2, 3)]
    variables += [continuous(f"a{i}", 0.0, 1.0) for i in (1, 2, 3)]
    variables += [continuous(f"b{i}", 0.0, 1.0) for i in (1, 2, 3)]
    variables += [binary(f"y{i}") for i in (1, 2, 3)]
    V = [Var(i) for i in range(3)]
    a = [Const(1.0)] + [Var(3 + i) for i in range(3)]
    b = [Const(0.0)] + [Var(6 + i) for i in range(3)]
    y = [Var(9 + i) for i in range(3)]
    equalities, inequalities = [], []
    for i in range(3):
        equalities.append(a[i] - a[i + 1] - K1 * V[i] * a[i + 1])
        equalities.append(b[i] - b[i + 1] + K1 * V[i] * a[i + 1] - K2 * V[i] * b[i + 1])
        inequalities.append(V[i] - max_volume * y[i])
    inequalities.append(a[3] - (1.0 - conversion))
    if min_yield > 0.0:
        inequalities.append(min_yield - b[3])
    objective = total(V) + total(float(c) * yi for c, yi in zip(stage_costs, y))
    return MinlpProblem(
        variables,
        objective,
        equalities,
        inequalities,
        equality_names=[f"{s}{i}" for i in (1, 2, 3) for s in ("balA", "balB")],
        inequality_names=[f"link{i}" for i in (1, 2, 3)]
        + ["conversion"]
        + (["yield"] if min_yield > 0.0 else []),
    )


def series_cstr_volume(conversion: float, stages: int) -> float:
    """Minimum total residence time of ``stages`` equal first-order CSTRs."""
    return stages * ((1.0 / (1.0 - conversion)) ** (1.0 / stages) - 1.0) / K1


def worked_instance() -> MinlpProblem:
    """``min (x - 0.6)^2 + 0.5 y  s.t.  x - y <= 0``, x in [0, 1]; optimum 0.36 at y = 0."""
    x, y = Var(0), Var(1)
    return MinlpProblem([continuous("x", 0, 1), binary("y")], (x - 0.6) ** 2 + 0.5 * y, [], [x - y])


def bound_stall_instance() -> MinlpProblem:
    """Child ``y1 = 1`` is infeasible; its bound-tightening walk stalls near t = 0.909.

    The last converged objective there (about 0.25) exceeds the final
    incumbent (0.2205 at y1 = y2 = 0), so that record is dominated.
    """
    x, y1, y2 = Var(0), Var(1), Var(2)
    return MinlpProblem(
        [continuous("x", 0.0, 1.0), binary("y1"), binary("y2")],
        (y1 - 0.45) ** 2 + 0.2 * (y2 - 0.3) ** 2 + (x - 0.5) ** 2,
        [],
        [y1 - 0.95],
    )


# --------------------------------------------------------------------------
# suites and reports


def _sizes(seed, n_max, m_max):
    rng = np.random.default_rng(seed)
    return int(rng.integers(1, n_max + 1)), int(rng.integers(1, m_max + 1))


def suite_instances(name: str, count: int | None = None) -> list[tuple[str, MinlpProblem]]:
    """Named instance lists: convex, nonconvex, narrow_channel, reactor, worked, stall, empty."""
    if name == "convex":
        seeds = range(1, (count or 50) + 1)
        return [(f"convex_qp-{s}", generate_instance(s, *_sizes(s, 8, 6), "convex_qp")) for s in seeds]
    if name == "nonconvex":
        seeds = range(1, (count or 20) + 1)
        return [(f"nonconvex_poly-{s}", generate_instance(s, *_sizes(s, 4, 4), "nonconvex_poly")) for s in seeds]
    if name == "narrow_channel":
        seeds = range(1, (count or 5) + 1)
        return [(f"narrow_channel-{s}", generate_instance(s, *_sizes(s, 4, 3), "narrow_channel")) for s in seeds]
    if name == "reactor":
        return [("reactor-3stage", reactor_network_instance())]
    if name == "worked":
        return [("worked", worked_instance())]
    if name == "stall":
        return [("bound-stall", bound_stall_instance())]
    if name == "empty":
        return []
    raise ValueError(f"unknown suite {name!r}")


SUITES = ("convex", "nonconvex", "narrow_channel", "reactor", "worked", "stall", "empty")

COLUMNS = ("instance", "algorithm", "start", "objective", "oracle", "rel_err", "n_node", "n_inf", "n_nlp",
           "t_post", "n_inf_post", "wall_s", "status")


@dataclass
class BenchmarkRow:
    instance: str
    algorithm: str
    start: str
    status: str
    objective: float | None
    oracle: float | None
    n_node: int
    n_inf: int
    n_nlp: int
    t_post: float
    n_inf_post: int
    n_nlp_post: int
    wall_seconds: float
    polish_relative_change: float | None = None

    @property
    def rel_err(self) -> float | None:
        if self.objective is None or self.oracle is None:
            return None
        return abs(self.objective - self.oracle) / max(1.0, abs(self.oracle))


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = []
        for r in self.rows:
            d = {
                "instance": r.instance,
                "algorithm": r.algorithm,
                "start": r.start,
                "status": r.status,
                "objective": r.objective,
                "oracle_objective": r.oracle,
                "relative_error": r.rel_err,
                "n_node": r.n_node,
                "n_inf": r.n_inf,
                "n_nlp": r.n_nlp,
                "t_post_seconds": r.t_post,
                "n_inf_post": r.n_inf_post,
                "n_nlp_post": r.n_nlp_post,
                "wall_seconds": r.wall_seconds,
                "polish_relative_change": r.polish_relative_change,
            }
            out.append(d)
        return {"rows": out}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def to_table(self) -> str:
        def fmt(v, digits=6):
            if v is None:
                return "-"
            if isinstance(v, float):
                return f"{v:.{digits}g}"
            return str(v)

        cells = [list(COLUMNS)]
        for r in self.rows:
            cells.append(
                [
                    r.instance,
                    r.algorithm,
                    r.start,
                    fmt(r.objective, 8),
                    fmt(r.oracle, 8),
                    fmt(r.rel_err, 2),
                    fmt(r.n_node),
                    fmt(r.n_inf),
                    fmt(r.n_nlp),
                    fmt(r.t_post, 3),
                    fmt(r.n_inf_post),
                    fmt(r.wall_seconds, 3),
                    r.status,
                ]
            )
        widths = [max(len(row[i]) for row in cells) for i in range(len(COLUMNS))]
        lines = ["  ".join(c.rjust(w) if k >= 3 else c.ljust(w) for k, (c, w) in enumerate(zip(row, widths)))
                 for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(line.rstrip() for line in lines)


@dataclass(frozen=True)
class BenchmarkOptions:
    bnb: BnbOptions = field(default_factory=BnbOptions)
    starts: tuple[str, ...] = ("midpoint",)
    oracle_multistarts: int = 5
    jobs: int = 1


def start_point(prob: MinlpProblem, strategy: str) -> np.ndarray:
    """``midpoint`` or ``random:<seed>`` (uniform in the box)."""
    if strategy == "midpoint":
        return prob.midpoint()
    if strategy.startswith("random:"):
        seed = int(strategy.split(":", 1)[1])
        return np.random.default_rng(seed).uniform(prob.lower, prob.upper)
    raise ValueError(f"unknown start strategy {strategy!r}")


def _run_cell(args):
    name, prob, algorithm, strategy, bnb_opts, oracle = args
    started = time.perf_counter()
    try:
        rep = solve_minlp(prob, algorithm, start_point(prob, strategy), bnb_opts)
    except RootFailure:
        return BenchmarkRow(name, algorithm, strategy, "RootFailure", None, oracle, 1, 0, 1, 0.0, 0, 0,
                            time.perf_counter() - started)
    return BenchmarkRow(
        name, rep.algorithm, strategy, rep.status, rep.objective, oracle, rep.n_node, rep.n_inf, rep.n_nlp,
        rep.t_post, rep.n_inf_post, rep.n_nlp_post, rep.wall_seconds, rep.polish_relative_change,
    )


def _oracle_objective(args):
    prob, multistarts, nlp = args
    return brute_force_solve(prob, multistarts, nlp).objective


def run_benchmark(suite, algorithms=ALGORITHMS, opts: BenchmarkOptions | None = None) -> BenchmarkReport:
    """Solve every instance of ``suite`` with each algorithm and start, next to its oracle value.

    ``suite`` is a suite name or a list of ``(name, problem)`` pairs. With
    ``opts.jobs > 1`` the oracle runs and the (instance, algorithm, start)
    cells are spread over worker processes; row order does not change.
    """
    opts = opts or BenchmarkOptions()
    instances = suite_instances(suite) if isinstance(suite, str) else list(suite)
    algorithms = [normalize_algorithm(a) for a in algorithms]
    if not instances:
        return BenchmarkReport()
    oracle_jobs = [(p, opts.oracle_multistarts, opts.bnb.nlp) for _, p in instances]
    pool = ProcessPoolExecutor(opts.jobs) if opts.jobs > 1 else None
    try:
        mapper = pool.map if pool else map
        oracles = list(mapper(_oracle_objective, oracle_jobs))
        cells = [
            (name, prob, alg, strategy, opts.bnb, oracle)
            for (name, prob), oracle in zip(instances, oracles)
            for alg in algorithms
            for strategy in opts.starts
        ]
        rows = list(mapper(_run_cell, cells))
    finally:
        if pool:
            pool.shutdown()
    return BenchmarkReport(rows)

import numpy as np
import pytest

from hcbb.bench import worked_instance
from hcbb.nlp import NlpResult, NlpStatus


@pytest.fixture
def worked():
    return worked_instance()


class ScriptedSolver:
    """Stand-in NLP solver returning pre-set statuses in order and logging every call.

    ``objectives`` (optional) supplies the objective reported with each result.
    Each log entry is ``(subproblem, start)``.
    """

    def __init__(self, statuses, objectives=None):
        self.statuses = list(statuses)
        self.objectives = list(objectives) if objectives is not None else None
        self.calls = []

    def __call__(self, prob, start, opts=None):
        k = len(self.calls)
        self.calls.append((prob, np.array(start, dtype=float)))
        if k >= len(self.statuses):
            raise AssertionError(f"solver called {k + 1} times, script has {len(self.statuses)} entries")
        status = NlpStatus(self.statuses[k])
        objective = self.objectives[k] if self.objectives else 0.0
        point = np.clip(np.array(start, dtype=float), prob.lower, prob.upper) + 0.0
        return NlpResult(status, point, objective, 0.0 if status in (NlpStatus.OPTIMAL, NlpStatus.FEASIBLE) else 1.0)


class CountingSolver:
    """Wraps a real solver and counts invocations."""

    def __init__(self, inner):
        self.inner = inner
        self.count = 0

    def __call__(self, prob, start, opts=None):
        self.count += 1
        return self.inner(prob, start, opts)


@pytest.fixture
def scripted():
    return ScriptedSolver


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

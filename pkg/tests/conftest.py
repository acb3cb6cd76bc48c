"""Session-wide instrumentation.

Every ``evaluate_estimates`` call has its bias-variance identity residual
recorded, and fused fits are recorded (with their KKT bound) while
``FIT_LOG.active`` is set.
"""

import functools

import numpy as np
import pytest

from subtransfer import estimator, simulation, tuning

IDENTITY_RESIDUALS = []


class _FitLog:
    def __init__(self):
        self.active = False
        self.converged = 0
        self.violations = []


FIT_LOG = _FitLog()

_evaluate = simulation.evaluate_estimates


@functools.wraps(_evaluate)
def _recorded_evaluate(*args, **kwargs):
    out = _evaluate(*args, **kwargs)
    IDENTITY_RESIDUALS.append(out.identity_residual)
    return out


simulation.evaluate_estimates = _recorded_evaluate

_fit_fused = estimator.fit_fused


@functools.wraps(_fit_fused)
def _recorded_fit(problem, settings=None, **kwargs):
    res = _fit_fused(problem, settings, **kwargs)
    if FIT_LOG.active and res.converged:
        tol = (settings or estimator.SolverSettings()).tol
        bound = estimator.kkt_bound(problem, tol)
        FIT_LOG.converged += 1
        if not res.kkt_residual <= bound:
            FIT_LOG.violations.append((res.kkt_residual, bound))
    return res


estimator.fit_fused = _recorded_fit
tuning.fit_fused = _recorded_fit


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria report, printed at the end of the session
ACCEPTANCE = []


def report(criterion, passed, detail=""):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_collection_modifyitems(items):
    # acceptance checks read logs filled by the rest of the suite, so they run last
    items.sort(key=lambda item: item.module.__name__ == "test_acceptance")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from l1ao.problem import Penalty, StackedConstraints, TVFunction, BarrierProblem, ZeroModel
from l1ao.scenarios import example1, example2, synthetic
from l1ao.simulation import run


def zeros(shape):
    return lambda t, v: np.zeros(shape)


def quadratic(n=1, center=None):
    """f0 = |v - a|^2 / 2 with a constant center ``a``."""
    a = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    return TVFunction(
        value=lambda t, v: 0.5 * float((v - a) @ (v - a)),
        grad_v=lambda t, v: v - a,
        hess_vv=lambda t, v: np.eye(n),
        grad_vt=zeros(n),
        grad_vtt=zeros(n), grad_vvt=zeros((n, n)), grad_vvv=zeros((n, n, n)),
    )


@pytest.fixture
def quad_oracle():
    return BarrierProblem(quadratic(1), None, None, m_f=1.0)


@pytest.fixture(scope="session")
def ex1():
    return example1()


@pytest.fixture(scope="session")
def ex1_short():
    return example1(t_f=1.0)


@pytest.fixture(scope="session")
def ex1_l1_run(ex1):
    """Full-horizon L1-AO run on Example 1 with the default configuration."""
    return run(ex1, ex1.sim)


@pytest.fixture(scope="session")
def syn():
    return synthetic()


class _Ex2Runs:
    """Full-horizon Example 2 runs, computed once per session on demand."""

    variants = {"obstacles": {}, "free": {"obstacles": []}}

    def __init__(self):
        self._scen, self._runs, self.seconds = {}, {}, {}

    def scenario(self, variant):
        if variant not in self._scen:
            self._scen[variant] = example2(**self.variants[variant])
        return self._scen[variant]

    def get(self, variant, method):
        key = (variant, method)
        if key not in self._runs:
            import time
            s = self.scenario(variant)
            t0 = time.perf_counter()
            self._runs[key] = run(s, s.config(method))
            self.seconds[key] = time.perf_counter() - t0
        return self._runs[key]


@pytest.fixture(scope="session")
def ex2_runs():
    return _Ex2Runs()


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """``record(n, passed, detail, seconds)`` files one line per criterion."""
    def record(n, passed, detail, seconds=None):
        took = "" if seconds is None else f" ({seconds:.2f} s)"
        _ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}{took}"
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])

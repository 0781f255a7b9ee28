"""Fixed-step Euler simulation of the optimizers against a Newton ground truth.

A run advances ``v`` (and the adaptation state for L1 methods) with explicit
Euler at step ``dt``. Every step also solves ``min_v Phi(t, v)`` with a damped
Newton method so the trace carries the instantaneous minimizer ``v*(t)``.
Method timing and oracle timing are measured separately.
"""

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainViolation, NewtonFailure, NumericError
from .optimizers import (
    L1Augmentation,
    L1Config,
    ModifiedPcip,
    ModifiedPcipConfig,
    Pcip,
    PcipConfig,
)
from .problem import _solve, _vec

__all__ = [
    "METHODS",
    "SimConfig",
    "StaticStream",
    "newton_oracle",
    "Trace",
    "RunSummary",
    "RunResult",
    "run",
    "summary_statistics",
    "timing_report",
]

METHODS = ("pcip", "modified_pcip", "l1ao_pcip", "l1ao_modified_pcip", "oracle_only")

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100
ARMIJO_C = 1e-4


def newton_oracle(oracle, t, v_init, tilt=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Minimize ``Phi(t, .) - tilt . v`` by damped Newton with backtracking.

    Steps are halved until the trial point is feasible and satisfies the
    Armijo condition (c = 1e-4). ``tilt`` lets callers solve
    ``grad_v Phi(t, v) = tilt``.
    """
    return _newton(oracle, t, v_init, tilt, tol, max_iter)[0]


def _newton(oracle, t, v_init, tilt=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Newton iterate plus the (tilted) cost at the returned point."""
    v = _vec(v_init).copy()
    if not oracle.feasible(t, v):
        f = oracle.constraint_values(t, v)
        i = int(np.flatnonzero(~(f < 0))[0])
        raise DomainViolation(i, t, float(f[i]))
    tilt = None if tilt is None else _vec(tilt)

    def fval(x):
        val = oracle.value_if_feasible(t, x)
        if val is None or tilt is None:
            return val
        return val - tilt @ x

    val = fval(v)
    for it in range(max_iter + 1):
        g, H = oracle.grad_hess(t, v)
        if tilt is not None:
            g = g - tilt
        gn = math.sqrt(float(g @ g))
        if gn <= tol:
            return v, val
        if it == max_iter:
            break
        step = _solve(H, g, negate=True)
        slope = float(g @ step)
        # slack for roundoff in Phi once the decrease is below machine precision
        slack = 1e-13 * (1.0 + abs(val))
        alpha = 1.0
        while True:
            trial = v + alpha * step
            new = fval(trial)
            if new is not None and new <= val + ARMIJO_C * alpha * slope + slack:
                break
            alpha *= 0.5
            if alpha < 1e-20:
                raise NewtonFailure(t, gn, it)
        v, val = trial, new
    raise NewtonFailure(t, gn, max_iter)


class StaticStream:
    """Problem stream whose oracle does not depend on the run's history."""

    def __init__(self, oracle, model, cold_start):
        self.oracle = oracle
        self.model = model
        self._cold_start = cold_start
        self.n_v = len(_vec(cold_start(0.0)))

    def frame(self, t, v):
        return self.oracle, self.model

    def advance(self, t, dt, v):
        pass

    def cold_start(self, t):
        return _vec(self._cold_start(t))

    def problem_at(self, t):
        return self.oracle, self.model


@dataclass
class SimConfig:
    dt: float = 1e-3
    t_f: float = 10.0
    v0: Optional[np.ndarray] = None
    method: str = "l1ao_pcip"
    pcip: Optional[PcipConfig] = None
    modified_pcip: Optional[ModifiedPcipConfig] = None
    l1: Optional[L1Config] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_f > 0:
            raise ConfigError(f"t_f must be positive, got {self.t_f}")
        ratio = self.t_f / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError(f"t_f={self.t_f!r} is not an integer multiple of dt={self.dt!r}")
        if self.v0 is not None:
            self.v0 = _vec(self.v0).copy()

    @property
    def n_steps(self):
        return int(round(self.t_f / self.dt))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def build_optimizer(self):
        """Return the update law for ``method`` (None for ``oracle_only``)."""
        m = self.method
        if m == "oracle_only":
            return None
        if m.endswith("modified_pcip"):
            if self.modified_pcip is None:
                raise ConfigError(f"method {m} needs a modified PCIP config")
            base = ModifiedPcip(self.modified_pcip)
        else:
            if self.pcip is None:
                raise ConfigError(f"method {m} needs a PCIP config")
            base = Pcip(self.pcip)
        if m.startswith("l1ao_"):
            if self.l1 is None:
                raise ConfigError(f"method {m} needs an L1 config")
            return L1Augmentation(base, self.l1, self.dt)
        return base


@dataclass
class Trace:
    """Columnar trace; row ``k`` is the state at ``t_k`` before the Euler update."""

    t: np.ndarray
    v: np.ndarray
    v_star: np.ndarray
    grad_norm: np.ndarray
    cost_gap: np.ndarray
    sigma_true: np.ndarray
    sigma_hat: np.ndarray
    vdot_b: np.ndarray
    vdot_a: np.ndarray
    step_elapsed_ns: np.ndarray
    feasible: np.ndarray
    oracle_elapsed_ns: Optional[np.ndarray] = None

    VECTOR_COLUMNS = ("v", "v_star", "sigma_true", "sigma_hat", "vdot_b", "vdot_a")

    @classmethod
    def empty(cls, rows, n):
        nan = lambda *s: np.full(s, np.nan)
        return cls(
            t=nan(rows), v=nan(rows, n), v_star=nan(rows, n), grad_norm=nan(rows),
            cost_gap=nan(rows), sigma_true=nan(rows, n), sigma_hat=nan(rows, n),
            vdot_b=nan(rows, n), vdot_a=nan(rows, n),
            step_elapsed_ns=np.zeros(rows, dtype=np.int64),
            feasible=np.zeros(rows, dtype=bool),
            oracle_elapsed_ns=np.zeros(rows, dtype=np.int64),
        )

    def truncate(self, rows):
        kw = {}
        for f in dataclasses.fields(self):
            a = getattr(self, f.name)
            kw[f.name] = None if a is None else a[:rows].copy()
        return Trace(**kw)

    def __len__(self):
        return len(self.t)

    @property
    def n_v(self):
        return self.v.shape[1]

    @property
    def variable_error(self):
        return np.linalg.norm(self.v - self.v_star, axis=1)

    @property
    def rate_norm(self):
        return np.linalg.norm(self.vdot_b + self.vdot_a, axis=1)

    def same_values(self, other):
        """Bit-identical comparison ignoring the timing columns."""
        for name in ("t", "grad_norm", "cost_gap", "feasible") + self.VECTOR_COLUMNS:
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or not np.array_equal(a, b, equal_nan=True):
                return False
        return True


@dataclass
class RunSummary:
    method: str
    terminated_early: bool
    reason: str
    rows: int
    sup_grad_norm: float
    sup_variable_error: float
    sup_cost_gap: float
    max_rate_norm: float
    mean_step_elapsed_ns: float
    mean_oracle_elapsed_ns: float = float("nan")
    certificate: Optional[dict] = None

    STAT_KEYS = ("rows", "sup_grad_norm", "sup_variable_error", "sup_cost_gap",
                 "max_rate_norm", "mean_step_elapsed_ns", "terminated_early")

    def statistics(self):
        return {k: getattr(self, k) for k in self.STAT_KEYS}


def summary_statistics(trace: Trace):
    """Statistics recomputable from the trace columns alone."""
    ok = trace.feasible
    def sup(x):
        x = x[ok]
        return float(np.max(x)) if x.size else float("nan")
    return {
        "rows": len(trace),
        "sup_grad_norm": sup(trace.grad_norm),
        "sup_variable_error": sup(trace.variable_error),
        "sup_cost_gap": sup(trace.cost_gap),
        "max_rate_norm": sup(trace.rate_norm),
        "mean_step_elapsed_ns": float(np.mean(trace.step_elapsed_ns[ok])) if ok.any() else float("nan"),
        "terminated_early": bool(len(trace) and not trace.feasible[-1]),
    }


@dataclass
class RunResult:
    trace: Trace
    summary: RunSummary
    stream: object = None
    config: Optional[SimConfig] = None
    extras: dict = field(default_factory=dict)

    @property
    def completed(self):
        return not self.summary.terminated_early


def _ns():
    return time.perf_counter_ns()


def _truth(oracle, t, history, stream):
    """Warm-started Newton with a cold-start fallback.

    ``history`` holds the last two minimizers; the warm start extrapolates
    them linearly and falls back to the latest one, then to a cold start.
    """
    starts = []
    if len(history) == 2:
        starts.append(2.0 * history[1] - history[0])
    if history:
        starts.append(history[-1])
    for warm in starts:
        if oracle.feasible(t, warm):
            try:
                return _newton(oracle, t, warm)
            except NumericError:
                pass
    return _newton(oracle, t, stream.cold_start(t))


def run(scenario, cfg: SimConfig):
    """Simulate ``cfg.method`` on ``scenario`` and return a :class:`RunResult`.

    ``scenario`` is anything with ``new_stream()`` (see :mod:`l1ao.scenarios`)
    or a stream object itself.
    """
    stream = scenario.new_stream() if hasattr(scenario, "new_stream") else scenario
    if cfg.v0 is None:
        v0 = getattr(scenario, "default_v0", None)
        if v0 is None:
            raise ConfigError("no initial point: set sim.v0")
    else:
        v0 = cfg.v0
    v = _vec(v0).copy()
    n = len(v)
    dt, N = cfg.dt, cfg.n_steps
    oracle, model = stream.frame(0.0, v)
    if not oracle.feasible(0.0, v):
        raise ConfigError(f"initial point v0={v} is infeasible at t=0")

    opt = cfg.build_optimizer()
    is_l1 = isinstance(opt, L1Augmentation)
    if is_l1:
        opt.reset(oracle.grad_v(0.0, v))
    zeros = np.zeros(n)

    tr = Trace.empty(N + 2, n)
    v_star = None
    history = []
    rows = 0
    reason = "completed"
    for k in range(N + 1):
        t = k * dt
        c0 = _ns()
        v_star, phi_star = _truth(oracle, t, history, stream)
        oracle_ns = _ns() - c0
        history = [history[-1], v_star] if history else [v_star]

        if opt is None:
            c0 = _ns()
            v = newton_oracle(oracle, t, stream.cold_start(t))
            step_ns = _ns() - c0
            vdot = vb = va = sh = zeros
            g, H = oracle.grad_hess(t, v)
            gvt_hat = _vec(model.grad_vt_hat(t, v))
        else:
            c0 = _ns()
            g, H = oracle.grad_hess(t, v)
            gvt_hat = _vec(model.grad_vt_hat(t, v))
            if is_l1:
                vdot, vb = opt.rates(k, g, H, gvt_hat)
                st = opt.state
                va, sh = st.vdot_a, st.sigma_hat_held
            else:
                vb = opt.rate(g, H, gvt_hat)
                vdot, va, sh = vb, zeros, zeros
            step_ns = _ns() - c0

        gvt = oracle.grad_vt(t, v)
        tr.t[rows] = t
        tr.v[rows] = v
        tr.v_star[rows] = v_star
        tr.grad_norm[rows] = np.linalg.norm(g)
        tr.cost_gap[rows] = oracle.value(t, v) - phi_star
        tr.sigma_true[rows] = _solve(H, gvt_hat - gvt, negate=True)
        tr.sigma_hat[rows] = sh
        tr.vdot_b[rows] = vb
        tr.vdot_a[rows] = va
        tr.feasible[rows] = True
        tr.oracle_elapsed_ns[rows] = oracle_ns
        row = rows
        rows += 1

        if k == N:
            tr.step_elapsed_ns[row] = step_ns
            break

        c0 = _ns()
        v_next = v + dt * vdot
        if is_l1:
            opt.advance(g, H, gvt_hat, vdot)
        step_ns += _ns() - c0
        tr.step_elapsed_ns[row] = step_ns

        stream.advance(t, dt, v)
        v = v_next
        t_next = (k + 1) * dt
        oracle, model = stream.frame(t_next, v)
        if opt is not None and not oracle.feasible(t_next, v):
            f = oracle.constraint_values(t_next, v)
            i = int(np.flatnonzero(~(f < 0))[0])
            reason = f"constraint {i} violated at t={t_next:.6g}"
            tr.t[rows] = t_next
            tr.v[rows] = v
            try:
                tr.v_star[rows] = _truth(oracle, t_next, history, stream)[0]
            except (NumericError, DomainViolation):
                pass
            tr.feasible[rows] = False
            rows += 1
            break

    trace = tr.truncate(rows)
    stats = summary_statistics(trace)
    ok = trace.feasible
    summary = RunSummary(
        method=cfg.method,
        terminated_early=stats["terminated_early"],
        reason=reason,
        rows=stats["rows"],
        sup_grad_norm=stats["sup_grad_norm"],
        sup_variable_error=stats["sup_variable_error"],
        sup_cost_gap=stats["sup_cost_gap"],
        max_rate_norm=stats["max_rate_norm"],
        mean_step_elapsed_ns=stats["mean_step_elapsed_ns"],
        mean_oracle_elapsed_ns=float(np.mean(trace.oracle_elapsed_ns[ok])) if ok.any() else float("nan"),
    )
    return RunResult(trace, summary, stream, cfg)


def timing_report(results):
    """Mean per-step method time for each run and ratios against the oracle.

    The comparator is the cold-start Newton time of an ``oracle_only`` run when
    one is present, otherwise the pooled warm-start Newton time of all runs.
    Returns a list of ``(label, mean_ns, ratio_to_oracle)`` rows, oracle first.
    """
    if not results:
        raise ConfigError("timing_report needs at least one trace")
    oracle_runs = [r for r in results if r.summary.method == "oracle_only"]
    if oracle_runs:
        label = "newton_oracle"
        ref = float(np.mean([r.summary.mean_step_elapsed_ns for r in oracle_runs]))
    else:
        label = "newton_oracle(warm)"
        ref = float(np.mean(np.concatenate(
            [r.trace.oracle_elapsed_ns[r.trace.feasible] for r in results])))
    rows = [(label, ref, 1.0)]
    for r in results:
        if r.summary.method == "oracle_only":
            continue
        m = r.summary.mean_step_elapsed_ns
        rows.append((r.summary.method, m, m / ref if ref else float("nan")))
    return rows

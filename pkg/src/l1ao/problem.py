"""Time-varying problem oracles and log-barrier composition.

A time-varying (TV) convex problem

    min_v f_0(t, v)   s.t.   f_i(t, v) <= 0,  i = 1..p

is replaced by the smooth unconstrained cost

    Phi(t, v) = f_0(t, v) - (1 / c(t)) * sum_i log(-f_i(t, v)).

:class:`BarrierProblem` evaluates ``Phi`` together with every partial
derivative the optimizers and the certificate need, by the chain rule over
the component oracles.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainViolation, NumericError

__all__ = [
    "TVFunction",
    "Penalty",
    "ConstraintSet",
    "StackedConstraints",
    "ConstrainedTVProblem",
    "BarrierProblem",
    "compose_barrier",
    "ZeroModel",
    "ExactModel",
    "NominalModel",
    "DerivativeReport",
    "check_derivatives",
    "check_derivative_samples",
    "true_sigma",
]

FD_STEP = 1e-6
FD_REL_TOL = 1e-5


def _vec(v):
    if type(v) is np.ndarray and v.ndim == 1 and v.dtype == np.float64:
        return v
    return np.atleast_1d(np.asarray(v, dtype=float))


@dataclass(frozen=True)
class TVFunction:
    """Scalar function ``f(t, v)`` given by its value and partial derivatives.

    ``grad_t`` is required for functions used as constraints. The higher
    partials (``grad_tt`` onwards) are only needed for certification.
    """

    value: Callable
    grad_v: Callable
    hess_vv: Callable
    grad_vt: Callable
    grad_t: Optional[Callable] = None
    grad_tt: Optional[Callable] = None
    grad_vtt: Optional[Callable] = None
    grad_vvt: Optional[Callable] = None
    grad_vvv: Optional[Callable] = None

    @property
    def has_higher(self):
        return None not in (self.grad_vtt, self.grad_vvt, self.grad_vvv)


@dataclass(frozen=True)
class Penalty:
    """Barrier weight c(t) > 0 with its first two time derivatives."""

    value: Callable
    rate: Callable = lambda t: 0.0
    accel: Callable = lambda t: 0.0

    @classmethod
    def constant(cls, c):
        c = float(c)
        if not c > 0:
            raise ConfigError(f"penalty must be positive, got {c}")
        return cls(value=lambda t: c)

    @classmethod
    def exponential(cls, scale, time_constant):
        """c(t) = scale * exp(t / time_constant)."""
        scale, tau = float(scale), float(time_constant)
        if not scale > 0:
            raise ConfigError(f"penalty scale must be positive, got {scale}")
        if not tau > 0:
            raise ConfigError(f"penalty time constant must be positive, got {tau}")
        return cls(
            value=lambda t: scale * math.exp(t / tau),
            rate=lambda t: scale * math.exp(t / tau) / tau,
            accel=lambda t: scale * math.exp(t / tau) / tau**2,
        )


class ConstraintSet:
    """Batched evaluation of p constraint functions.

    Subclasses return stacked arrays: values ``(p,)``, ``f_t (p,)``,
    ``f_v (p, n)``, ``f_vv (p, n, n)``, ``f_vt (p, n)`` and, when
    ``has_higher`` is true, ``f_tt (p,)``, ``f_vtt (p, n)``,
    ``f_vvt (p, n, n)``, ``f_vvv (p, n, n, n)``. Sets that are affine in
    ``v`` may return None for ``f_vv``.
    """

    n_constraints = 0
    has_higher = True

    def values(self, t, v):
        return np.zeros(0)

    def jet(self, t, v):
        n = len(v)
        return (np.zeros(0), np.zeros(0), np.zeros((0, n)),
                np.zeros((0, n, n)), np.zeros((0, n)))

    def higher(self, t, v):
        n = len(v)
        return (np.zeros(0), np.zeros((0, n)), np.zeros((0, n, n)),
                np.zeros((0, n, n, n)))


class StackedConstraints(ConstraintSet):
    """Adapts a list of :class:`TVFunction` constraints to a ConstraintSet."""

    def __init__(self, functions: Sequence[TVFunction]):
        self.functions = tuple(functions)
        for i, f in enumerate(self.functions):
            if f.grad_t is None:
                raise ConfigError(f"constraint {i} has no grad_t")
        self.n_constraints = len(self.functions)
        self.has_higher = all(
            f.has_higher and f.grad_tt is not None for f in self.functions
        )

    def values(self, t, v):
        return np.array([f.value(t, v) for f in self.functions], dtype=float)

    def jet(self, t, v):
        if not self.functions:
            return super().jet(t, v)
        fs = self.functions
        return (
            np.array([f.value(t, v) for f in fs], dtype=float),
            np.array([f.grad_t(t, v) for f in fs], dtype=float),
            np.array([_vec(f.grad_v(t, v)) for f in fs]),
            np.array([np.atleast_2d(f.hess_vv(t, v)) for f in fs]),
            np.array([_vec(f.grad_vt(t, v)) for f in fs]),
        )

    def higher(self, t, v):
        if not self.functions:
            return super().higher(t, v)
        n = len(v)
        fs = self.functions
        return (
            np.array([f.grad_tt(t, v) for f in fs], dtype=float),
            np.array([_vec(f.grad_vtt(t, v)) for f in fs]),
            np.array([np.reshape(f.grad_vvt(t, v), (n, n)) for f in fs]),
            np.array([np.reshape(f.grad_vvv(t, v), (n, n, n)) for f in fs]),
        )


@dataclass
class ConstrainedTVProblem:
    objective: TVFunction
    constraints: Sequence[TVFunction] = field(default_factory=list)
    penalty: Penalty = field(default_factory=lambda: Penalty.constant(1.0))
    m_f: float = 1.0


class BarrierProblem:
    """Log-barrier cost Phi(t, v) and its partial derivatives.

    The oracle is stateless; every method is a pure function of ``(t, v)``.
    Evaluating anything at an infeasible point raises
    :class:`~l1ao.errors.DomainViolation`.
    """

    def __init__(self, objective: TVFunction, constraints: ConstraintSet = None,
                 penalty: Penalty = None, m_f=1.0):
        if not m_f > 0:
            raise ConfigError(f"strong convexity constant must be positive, got {m_f}")
        self.objective = objective
        self.constraints = constraints if constraints is not None else ConstraintSet()
        self.penalty = penalty if penalty is not None else Penalty.constant(1.0)
        self.m_f = float(m_f)

    @property
    def has_higher(self):
        return self.objective.has_higher and self.constraints.has_higher

    # -- domain --------------------------------------------------------------

    def constraint_values(self, t, v):
        return self.constraints.values(t, _vec(v))

    def feasible(self, t, v):
        f = self.constraint_values(t, v)
        return not f.size or bool(f.max() < 0.0)

    def _check(self, t, f):
        if f.size and not f.max() < 0.0:
            bad = np.flatnonzero(~(f < 0.0))
            raise DomainViolation(int(bad[0]), t, float(f[bad[0]]))

    def _weights(self, t):
        c = self.penalty.value(t)
        if not c > 0:
            raise NumericError(f"penalty c(t) = {c} is not positive at t={t}")
        return 1.0 / c, -self.penalty.rate(t) / c**2

    # -- evaluation ----------------------------------------------------------

    def value(self, t, v):
        phi = self.value_if_feasible(t, v)
        if phi is None:
            self._check(t, self.constraint_values(t, v))
        return phi

    def value_if_feasible(self, t, v):
        """``Phi(t, v)``, or None outside the domain (one constraint evaluation)."""
        v = _vec(v)
        phi = float(self.objective.value(t, v))
        if self.constraints.n_constraints:
            f = self.constraints.values(t, v)
            if not f.max() < 0.0:
                return None
            c = self.penalty.value(t)
            if not c > 0:
                raise NumericError(f"penalty c(t) = {c} is not positive at t={t}")
            phi -= float(np.log(-f).sum()) / c
        return phi

    def _first(self, t, v, want_vt=True, want_H=True):
        obj = self.objective
        g = np.array(obj.grad_v(t, v), dtype=float, ndmin=1)
        H = np.array(obj.hess_vv(t, v), dtype=float, ndmin=2) if want_H else None
        gt = np.array(obj.grad_vt(t, v), dtype=float, ndmin=1) if want_vt else None
        if self.constraints.n_constraints:
            f, f_t, f_v, f_vv, f_vt = self.constraints.jet(t, v)
            self._check(t, f)
            w, wdot = self._weights(t)
            inv = 1.0 / f
            psi_v = inv @ f_v
            g -= w * psi_v
            if want_H:
                curv = (f_v.T * inv**2) @ f_v
                if f_vv is not None:
                    curv -= np.einsum("p,pij->ij", inv, f_vv)
                H += w * curv
            if want_vt:
                psi_vt = inv @ f_vt - (f_t * inv**2) @ f_v
                gt -= w * psi_vt + wdot * psi_v
        return g, H, gt

    def grad_v(self, t, v):
        return self._first(t, _vec(v), want_vt=False)[0]

    def hess_vv(self, t, v):
        return self._first(t, _vec(v), want_vt=False)[1]

    def grad_vt(self, t, v):
        return self._first(t, _vec(v), want_H=False)[2]

    def grad_hess(self, t, v):
        g, H, _ = self._first(t, _vec(v), want_vt=False)
        return g, H

    def first_order(self, t, v):
        """Return ``(grad_v, hess_vv, grad_vt)`` in one pass."""
        return self._first(t, _vec(v))

    def value_grad_hess(self, t, v):
        g, H, _ = self._first(t, _vec(v), want_vt=False)
        return self.value(t, v), g, H

    # -- higher partials (certification only) --------------------------------

    def higher(self, t, v):
        """Return ``(grad_vtt, grad_vvt, grad_vvv)``."""
        if not self.has_higher:
            raise ConfigError("oracle does not provide grad_vtt/grad_vvt/grad_vvv")
        v = _vec(v)
        n = len(v)
        obj = self.objective
        g_tt = _vec(obj.grad_vtt(t, v)).copy()
        g_vvt = np.reshape(obj.grad_vvt(t, v), (n, n)).astype(float)
        g_vvv = np.reshape(obj.grad_vvv(t, v), (n, n, n)).astype(float)
        if self.constraints.n_constraints:
            f, f_t, f_v, f_vv, f_vt = self.constraints.jet(t, v)
            self._check(t, f)
            if f_vv is None:
                f_vv = np.zeros((len(f), n, n))
            f_tt, f_vtt, f_vvt, f_vvv = self.constraints.higher(t, v)
            c = self.penalty.value(t)
            cd, cdd = self.penalty.rate(t), self.penalty.accel(t)
            w = 1.0 / c
            wd = -cd / c**2
            wdd = -cdd / c**2 + 2.0 * cd**2 / c**3
            i1, i2, i3 = 1.0 / f, 1.0 / f**2, 1.0 / f**3

            psi_v = f_v * i1[:, None]
            psi_vv = (f_vv * i1[:, None, None]
                      - np.einsum("p,pi,pj->pij", i2, f_v, f_v))
            psi_vt = f_vt * i1[:, None] - f_v * (f_t * i2)[:, None]
            psi_vtt = (f_vtt * i1[:, None]
                       - 2.0 * f_vt * (f_t * i2)[:, None]
                       - f_v * (f_tt * i2)[:, None]
                       + 2.0 * f_v * (f_t**2 * i3)[:, None])
            psi_vvt = (f_vvt * i1[:, None, None]
                       - f_vv * (f_t * i2)[:, None, None]
                       - np.einsum("p,pi,pj->pij", i2, f_vt, f_v)
                       - np.einsum("p,pi,pj->pij", i2, f_v, f_vt)
                       + np.einsum("p,pi,pj->pij", 2.0 * f_t * i3, f_v, f_v))
            psi_vvv = (f_vvv * i1[:, None, None, None]
                       - np.einsum("p,pab,pc->pabc", i2, f_vv, f_v)
                       - np.einsum("p,pac,pb->pabc", i2, f_vv, f_v)
                       - np.einsum("p,pbc,pa->pabc", i2, f_vv, f_v)
                       + np.einsum("p,pa,pb,pc->pabc", 2.0 * i3, f_v, f_v, f_v))

            g_tt -= (w * psi_vtt.sum(0) + 2.0 * wd * psi_vt.sum(0)
                     + wdd * psi_v.sum(0))
            g_vvt -= w * psi_vvt.sum(0) + wd * psi_vv.sum(0)
            g_vvv -= w * psi_vvv.sum(0)
        return g_tt, g_vvt, g_vvv

    def grad_vtt(self, t, v):
        return self.higher(t, v)[0]

    def grad_vvt(self, t, v):
        return self.higher(t, v)[1]

    def grad_vvv(self, t, v):
        return self.higher(t, v)[2]


def compose_barrier(problem: ConstrainedTVProblem) -> BarrierProblem:
    cons = problem.constraints
    if not isinstance(cons, ConstraintSet):
        cons = StackedConstraints(cons)
    return BarrierProblem(problem.objective, cons, problem.penalty, problem.m_f)


# -- prediction models -------------------------------------------------------


class ZeroModel:
    """Prediction model that assumes the problem is frozen in time."""

    has_higher = True

    def __init__(self, n_v):
        self.n_v = int(n_v)

    def grad_vt_hat(self, t, v):
        return np.zeros(self.n_v)

    def grad_vtt_hat(self, t, v):
        return np.zeros(self.n_v)

    def grad_vvt_hat(self, t, v):
        return np.zeros((self.n_v, self.n_v))


class ExactModel:
    """Prediction model equal to the true temporal derivative."""

    def __init__(self, oracle: BarrierProblem):
        self.oracle = oracle

    @property
    def has_higher(self):
        return self.oracle.has_higher

    def grad_vt_hat(self, t, v):
        return self.oracle.grad_vt(t, v)

    def grad_vtt_hat(self, t, v):
        return self.oracle.grad_vtt(t, v)

    def grad_vvt_hat(self, t, v):
        return self.oracle.grad_vvt(t, v)


class NominalModel(ExactModel):
    """Prediction from a nominal problem whose uncertain data are held still.

    The nominal oracle shares everything known with the true one; only the
    time derivative of the uncertain streaming data is zeroed.
    """


def true_sigma(oracle, model, t, v):
    """Matched uncertainty ``-H^{-1} (grad_vt_hat - grad_vt)`` at ``(t, v)``."""
    _, H, gvt = oracle.first_order(t, v)
    return _solve(H, model.grad_vt_hat(t, v) - gvt, negate=True)


def _solve(H, b, negate=False):
    # closed forms for n <= 2; np.linalg.solve call overhead dominates there
    if H.shape == (1, 1):
        h = float(H[0, 0])
        x = np.array([b[0] / h]) if h != 0.0 else np.array([np.inf])
    elif H.shape == (2, 2):
        a, c, d, e = float(H[0, 0]), float(H[0, 1]), float(H[1, 0]), float(H[1, 1])
        det = a * e - c * d
        if det == 0.0 or abs(det) < 1e-15 * max(abs(a * e), abs(c * d)):
            raise NumericError(f"singular Hessian (cond = {np.linalg.cond(H):.3e})")
        b0, b1 = float(b[0]), float(b[1])
        x = np.array([(e * b0 - c * b1) / det, (a * b1 - d * b0) / det])
    else:
        try:
            x = np.linalg.solve(H, b)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"singular Hessian (cond = {np.linalg.cond(H):.3e})") from exc
    if not np.all(np.isfinite(x)):
        raise NumericError(f"singular Hessian (cond = {np.linalg.cond(H):.3e})")
    return -x if negate else x


# -- finite-difference verification -----------------------------------------


@dataclass
class DerivativeReport:
    max_error: dict
    rel_tol: float
    n_checked: int
    skipped: list

    @property
    def passed(self):
        return all(e <= self.rel_tol for e in self.max_error.values())

    def lines(self):
        out = [f"{k:10s} max_rel_err = {e:.3e}  {'ok' if e <= self.rel_tol else 'FAIL'}"
               for k, e in self.max_error.items()]
        out.append(f"checked {self.n_checked} samples, skipped {len(self.skipped)}")
        return out


def _rel(analytic, fd):
    analytic, fd = np.asarray(analytic, float), np.asarray(fd, float)
    return float(np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1.0))


def check_derivatives(oracle, samples, rel_tol=FD_REL_TOL, step=FD_STEP,
                      higher=None):
    """Compare analytic partials against central finite differences.

    The relative error of each partial is ``|analytic - fd| / max(|fd|, 1)``.
    Samples closer to a constraint than ``10 * step`` are skipped. Higher
    partials are included when the oracle provides them (or when
    ``higher=True``).
    """
    if higher is None:
        higher = getattr(oracle, "has_higher", False)
    keys = ["grad_v", "hess_vv", "grad_vt"]
    if higher:
        keys += ["grad_vtt", "grad_vvt", "grad_vvv"]
    err = dict.fromkeys(keys, 0.0)
    skipped = []
    n_ok = 0
    h = step
    for t, v in samples:
        v = _vec(v)
        f = oracle.constraint_values(t, v) if hasattr(oracle, "constraint_values") else np.zeros(0)
        if f.size and np.max(f) > -10.0 * h:
            skipped.append((t, v))
            continue
        n = len(v)
        eye = np.eye(n)
        g, H, gt = oracle.first_order(t, v)
        fd_g = np.array([(oracle.value(t, v + h * e) - oracle.value(t, v - h * e)) / (2 * h)
                         for e in eye])
        fd_H = np.array([(oracle.grad_v(t, v + h * e) - oracle.grad_v(t, v - h * e)) / (2 * h)
                         for e in eye]).T
        fd_gt = (oracle.grad_v(t + h, v) - oracle.grad_v(t - h, v)) / (2 * h)
        err["grad_v"] = max(err["grad_v"], _rel(g, fd_g))
        err["hess_vv"] = max(err["hess_vv"], _rel(H, fd_H))
        err["grad_vt"] = max(err["grad_vt"], _rel(gt, fd_gt))
        if higher:
            g_tt, g_vvt, g_vvv = oracle.higher(t, v)
            fd_tt = (oracle.grad_vt(t + h, v) - oracle.grad_vt(t - h, v)) / (2 * h)
            fd_vvt = (oracle.hess_vv(t + h, v) - oracle.hess_vv(t - h, v)) / (2 * h)
            fd_vvv = np.stack([(oracle.hess_vv(t, v + h * e) - oracle.hess_vv(t, v - h * e)) / (2 * h)
                               for e in eye], axis=-1)
            err["grad_vtt"] = max(err["grad_vtt"], _rel(g_tt, fd_tt))
            err["grad_vvt"] = max(err["grad_vvt"], _rel(g_vvt, fd_vvt))
            err["grad_vvv"] = max(err["grad_vvv"], _rel(g_vvv, fd_vvv))
        n_ok += 1
    if n_ok == 0:
        raise ConfigError(
            "every derivative-check sample was infeasible or too close to a constraint")
    return DerivativeReport(err, rel_tol, n_ok, skipped)


def check_derivative_samples(samples, rel_tol=FD_REL_TOL, step=FD_STEP):
    """:func:`check_derivatives` over ``(oracle, t, v)`` triples, merged."""
    err, skipped, n_ok = {}, [], 0
    for oracle, t, v in samples:
        try:
            rep = check_derivatives(oracle, [(t, v)], rel_tol, step)
        except ConfigError:
            skipped.append((t, _vec(v)))
            continue
        for k, e in rep.max_error.items():
            err[k] = max(err.get(k, 0.0), e)
        n_ok += rep.n_checked
    if n_ok == 0:
        raise ConfigError(
            "every derivative-check sample was infeasible or too close to a constraint")
    return DerivativeReport(err, rel_tol, n_ok, skipped)

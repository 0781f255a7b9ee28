"""A priori tube certificate for the L1 augmentation.

Given uniform bounds on the problem's partial derivatives over the tube
``T_grad(rho)`` (a :class:`DeltaBase`), :func:`certify` closes the bound
chain, evaluates the constants ``zeta_1..zeta_4`` and decides whether the
sampling period ``T_s`` and filter bandwidth ``omega`` guarantee that the
gradient stays inside the ``rho`` ball for all time.

:func:`estimate_deltas` produces a DeltaBase by sampling a grid around the
per-time minimizer.
"""

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError
from .optimizers import L1Config
from .problem import _vec
from .simulation import StaticStream, newton_oracle

__all__ = [
    "BaselineCertificate",
    "DeltaBase",
    "DerivedDeltas",
    "Zetas",
    "TubeCertificate",
    "DeltaGrid",
    "pcip_certificate",
    "modified_pcip_certificate",
    "baseline_certificate",
    "delta_closure",
    "zetas",
    "rho_from",
    "certify",
    "estimate_deltas",
    "exact_deltas",
    "certify_scenario",
]


@dataclass(frozen=True)
class BaselineCertificate:
    """Lyapunov data of a baseline law: ``a_lo |g|^2 <= V(g) <= a_hi |g|^2``
    and ``dV/dt <= -2 beta V`` along the nominal gradient dynamics.

    ``V(g) = 1/2 g^T Q g`` with ``Q`` symmetric positive definite.
    """

    alpha_lo: float
    alpha_hi: float
    beta: float
    Q: Optional[np.ndarray] = None
    name: str = "custom"

    def __post_init__(self):
        for k in ("alpha_lo", "alpha_hi", "beta"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive, got {getattr(self, k)}")
        if self.alpha_lo > self.alpha_hi:
            raise ConfigError("alpha_lo must not exceed alpha_hi")

    def V(self, g):
        g = _vec(g)
        Q = np.eye(len(g)) if self.Q is None else self.Q
        return 0.5 * float(g @ Q @ g)

    def dV(self, g):
        g = _vec(g)
        return g.copy() if self.Q is None else self.Q @ g


def pcip_certificate(P):
    """``V = |g|^2 / 2``; exponential rate ``beta = lambda_min(P)``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return BaselineCertificate(0.5, 0.5, float(np.min(np.linalg.eigvalsh(P))), name="pcip")


def modified_pcip_certificate(P, epsilon, rho):
    """Same ``V`` as PCIP. Inside ``|g| <= rho`` the normalized correction
    contracts at ``lambda_min(P) / max(rho, epsilon)``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    lam = float(np.min(np.linalg.eigvalsh(P)))
    return BaselineCertificate(0.5, 0.5, lam / max(float(rho), float(epsilon)),
                               name="modified_pcip")


def baseline_certificate(law, rho=None):
    """Certificate for a :class:`~l1ao.optimizers.Pcip` or ``ModifiedPcip`` law."""
    if law.name == "modified_pcip":
        if rho is None:
            raise ConfigError("the modified PCIP certificate needs rho")
        return modified_pcip_certificate(law.P, law.epsilon, rho)
    if law.name == "pcip":
        return pcip_certificate(law.P)
    raise ConfigError(f"no certificate for baseline {law.name!r}")


@dataclass(frozen=True)
class DeltaBase:
    """Uniform bounds over the tube (names follow the quantity they bound)."""

    vdot_b: float
    dV: float
    grad_vt_hat: float
    grad_vt_err: float
    grad_vtt_err: float
    grad_vvt_err: float
    hess_vv: float
    grad_vvt: float
    grad_vvv: float

    def __post_init__(self):
        for f in fields(self):
            x = getattr(self, f.name)
            if not (math.isfinite(x) and x >= 0):
                raise ConfigError(f"delta {f.name} must be finite and nonnegative, got {x}")

    def scaled(self, factor):
        return DeltaBase(**{k: factor * v for k, v in asdict(self).items()})

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DerivedDeltas:
    sigma: float
    sigma_hat: float
    vdot: float
    hess_rate: float
    grad_vt_err_rate: float
    sigma_rate: float

    def to_dict(self):
        return asdict(self)


def delta_closure(base: DeltaBase, m_f, n_v, A_s=None) -> DerivedDeltas:
    """Propagate the base bounds in dependency order.

    ``A_s`` is accepted for signature symmetry with :func:`zetas`; the
    closure itself does not depend on it.
    """
    if not m_f > 0:
        raise ConfigError(f"m_f must be positive, got {m_f}")
    if int(n_v) < 1:
        raise ConfigError(f"n_v must be >= 1, got {n_v}")
    inv = 1.0 / m_f
    sigma = inv * base.grad_vt_err
    sigma_hat = math.sqrt(n_v) * inv * base.hess_vv * sigma
    vdot = base.vdot_b + sigma_hat
    hess_rate = base.grad_vvt + base.grad_vvv * vdot
    err_rate = base.grad_vtt_err + base.grad_vvt_err * vdot
    sigma_rate = inv * (hess_rate * inv * base.grad_vt_err + err_rate)
    return DerivedDeltas(sigma, sigma_hat, vdot, hess_rate, err_rate, sigma_rate)


@dataclass(frozen=True)
class Zetas:
    zeta1: float
    zeta2: float
    zeta3: float
    zeta4: float


def _lam_neg(A_s):
    a = np.asarray(A_s, dtype=float)
    a = np.diag(a) if a.ndim == 2 else np.atleast_1d(a)
    if not np.all(a < 0):
        raise ConfigError(f"A_s must have a strictly negative diagonal, got {a}")
    return float(np.min(-a))


def _zeta1(d: DerivedDeltas, beta, omega, dV, hess_vv):
    gap = abs(2.0 * beta - omega)
    if gap == 0.0:
        raise ConfigError(
            f"omega = 2*beta = {omega:g} makes zeta_1 singular; perturb omega")
    return dV * hess_vv * (d.sigma / gap + d.sigma_rate / (2.0 * beta * omega))


def zetas(derived: DerivedDeltas, baseline: BaselineCertificate, A_s, omega, m_f, n_v,
          dV, hess_vv) -> Zetas:
    if not omega > 0:
        raise ConfigError(f"omega must be positive, got {omega}")
    beta = baseline.beta
    z1 = _zeta1(derived, beta, omega, dV, hess_vv)
    z2 = (math.sqrt(n_v) / m_f) * (
        (2.0 * derived.sigma_rate + _lam_neg(A_s) * derived.sigma) * hess_vv
        + derived.sigma * derived.hess_rate)
    z3 = derived.sigma * omega
    z4 = dV * hess_vv * (z2 + z3) / (2.0 * beta)
    return Zetas(z1, z2, z3, z4)


def rho_from(baseline: BaselineCertificate, grad0, epsilon_rho=None, target_rho=None):
    """Return ``(rho, epsilon)`` with ``rho = sqrt(a_hi/a_lo) |g0| + epsilon``.

    With ``target_rho`` the slack is solved for; otherwise ``epsilon_rho``
    defaults to ``0.1 * max(1, |g0|)``.
    """
    base = math.sqrt(baseline.alpha_hi / baseline.alpha_lo) * float(np.linalg.norm(_vec(grad0)))
    if target_rho is not None:
        eps = float(target_rho) - base
        if not eps > 0:
            raise ConfigError(
                f"target rho {target_rho} does not exceed sqrt(a_hi/a_lo)|g0| = {base:.6g}")
    else:
        eps = 0.1 * max(1.0, base) if epsilon_rho is None else float(epsilon_rho)
        if not eps > 0:
            raise ConfigError(f"epsilon_rho must be positive, got {eps}")
    return base + eps, eps


@dataclass
class TubeCertificate:
    rho: float
    epsilon: float
    m_f: float
    n_v: int
    alpha_lo: float
    alpha_hi: float
    beta: float
    T_s: float
    omega: float
    V0: float
    base: DeltaBase
    derived: DerivedDeltas
    zeta1: float
    zeta2: float
    zeta3: float
    zeta4: float
    admissible: bool
    T_s_max: float
    violated: Optional[str] = None
    suggestion: Optional[str] = None
    notes: list = field(default_factory=list)

    @property
    def grad_bound(self):
        return self.rho

    @property
    def variable_bound(self):
        return self.rho / self.m_f

    @property
    def cost_gap_bound(self):
        return self.rho**2 / self.m_f

    def ultimate_grad_bound(self, t1):
        """Gradient bound valid for ``t >= t1``."""
        return math.sqrt((math.exp(-2.0 * self.beta * t1) * self.V0 + self.zeta1
                          + self.zeta4 * self.T_s) / self.alpha_lo)

    def ultimate_variable_bound(self, t1):
        return self.ultimate_grad_bound(t1) / self.m_f

    def ultimate_cost_gap_bound(self, t1):
        return self.ultimate_grad_bound(t1) ** 2 / self.m_f

    def to_dict(self):
        out = {k: getattr(self, k) for k in (
            "admissible", "rho", "epsilon", "m_f", "n_v", "alpha_lo", "alpha_hi",
            "beta", "T_s", "omega", "V0", "zeta1", "zeta2", "zeta3", "zeta4", "T_s_max")}
        out["violated"] = self.violated or "none"
        out["suggestion"] = self.suggestion or "none"
        out["grad_bound"] = self.grad_bound
        out["variable_bound"] = self.variable_bound
        out["cost_gap_bound"] = self.cost_gap_bound
        for k, v in self.base.to_dict().items():
            out[f"delta_{k}"] = v
        for k, v in self.derived.to_dict().items():
            out[f"delta_{k}"] = v
        return out


def _omega_for_zeta1(derived, beta, dV, hess_vv, budget, omega_lo):
    """Smallest omega > max(2 beta, omega_lo) with zeta_1(omega) < budget, by bisection."""
    f = lambda w: _zeta1(derived, beta, w, dV, hess_vv)
    lo = max(2.0 * beta, omega_lo) * (1.0 + 1e-12)
    if f(lo) < budget:
        return lo
    hi = 2.0 * lo
    while f(hi) >= budget:
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if f(mid) < budget else (mid, hi)
    return hi


def certify(baseline: BaselineCertificate, base: DeltaBase, l1: L1Config, m_f, n_v, grad0,
            epsilon_rho=None, target_rho=None, rho=None) -> TubeCertificate:
    """Evaluate the certificate. Inadmissibility is reported, never raised.

    ``rho`` can be passed directly when the baseline certificate was built
    for a specific tube (modified PCIP).
    """
    if rho is None:
        rho, eps = rho_from(baseline, grad0, epsilon_rho, target_rho)
    else:
        eps = rho - math.sqrt(baseline.alpha_hi / baseline.alpha_lo) * float(
            np.linalg.norm(_vec(grad0)))
        if not eps > 0:
            raise ConfigError(f"rho = {rho} does not exceed the initial gradient bound")
    V0 = baseline.V(grad0)
    derived = delta_closure(base, m_f, n_v, l1.A_s)
    z = zetas(derived, baseline, l1.A_s, l1.omega, m_f, n_v, base.dV, base.hess_vv)
    budget = baseline.alpha_lo * rho**2
    slack = budget - z.zeta1 - V0
    if z.zeta4 == 0.0:
        T_s_max = math.inf if slack > 0 else 0.0
    else:
        T_s_max = slack / z.zeta4 if slack > 0 else 0.0
    cond1 = slack > 0
    cond2 = cond1 and l1.T_s <= T_s_max
    violated = suggestion = None
    if not cond1:
        violated = (f"alpha_lo*rho^2 = {budget:.6g} <= zeta1 + V0 = {z.zeta1 + V0:.6g}")
        if budget > V0:
            w = _omega_for_zeta1(derived, baseline.beta, base.dV, base.hess_vv,
                                 budget - V0, l1.omega)
            suggestion = (f"increase omega to at least {w:.6g}" if math.isfinite(w)
                          else "no finite omega satisfies the first condition; enlarge rho")
        else:
            suggestion = "V0 exceeds alpha_lo*rho^2; enlarge rho (epsilon)"
    elif not cond2:
        violated = f"T_s = {l1.T_s:.6g} > T_s_max = {T_s_max:.6g}"
        suggestion = f"decrease T_s to at most {T_s_max:.6g}"
    return TubeCertificate(
        rho=rho, epsilon=eps, m_f=float(m_f), n_v=int(n_v),
        alpha_lo=baseline.alpha_lo, alpha_hi=baseline.alpha_hi, beta=baseline.beta,
        T_s=l1.T_s, omega=l1.omega, V0=V0, base=base, derived=derived,
        zeta1=z.zeta1, zeta2=z.zeta2, zeta3=z.zeta3, zeta4=z.zeta4,
        admissible=bool(cond2), T_s_max=T_s_max, violated=violated, suggestion=suggestion,
    )


# -- sampling the base bounds -------------------------------------------------


@dataclass(frozen=True)
class DeltaGrid:
    """Sample layout: times over the horizon, radii in (0, R], directions."""

    times: int = 201
    radii: int = 8
    angles: int = 16
    safety_factor: float = 1.1
    region: str = "variable"
    seed: int = 0

    def __post_init__(self):
        if self.times < 1 or self.radii < 1 or self.angles < 1:
            raise ConfigError("grid sizes must be positive")
        if not self.safety_factor >= 1.0:
            raise ConfigError(f"safety factor must be >= 1, got {self.safety_factor}")
        if self.region not in ("variable", "gradient"):
            raise ConfigError(f"region must be 'variable' or 'gradient', got {self.region!r}")

    def refined(self, factor=2):
        return DeltaGrid(self.times * factor, self.radii * factor, self.angles * factor,
                         self.safety_factor, self.region, self.seed)

    def directions(self, n):
        if n == 1:
            return np.array([[1.0], [-1.0]])
        if n == 2:
            th = 2.0 * np.pi * np.arange(self.angles) / self.angles
            return np.stack([np.cos(th), np.sin(th)], axis=1)
        rng = np.random.default_rng(self.seed)
        d = rng.standard_normal((self.angles, n))
        return d / np.linalg.norm(d, axis=1, keepdims=True)


def _opnorm(x):
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return float(np.linalg.norm(x))
    if x.ndim == 2:
        return float(np.linalg.norm(x, 2))
    # Frobenius norm upper-bounds the induced norm of a rank-3 tensor
    return float(np.linalg.norm(x.ravel()))


def _model_higher(model, t, v):
    try:
        return _vec(model.grad_vtt_hat(t, v)), np.atleast_2d(model.grad_vvt_hat(t, v))
    except AttributeError as exc:
        raise ConfigError("prediction model does not provide grad_vtt_hat/grad_vvt_hat") from exc


def _sample_quantities(oracle, model, law, cert_dV, t, v):
    g, H, gvt = oracle.first_order(t, v)
    g_vtt, g_vvt, g_vvv = oracle.higher(t, v)
    gvt_hat = _vec(model.grad_vt_hat(t, v))
    h_vtt, h_vvt = _model_higher(model, t, v)
    return np.array([
        _opnorm(law.rate(g, H, gvt_hat)),
        _opnorm(cert_dV(g)),
        _opnorm(gvt_hat),
        _opnorm(gvt_hat - gvt),
        _opnorm(h_vtt - g_vtt),
        _opnorm(h_vvt - g_vvt),
        _opnorm(H),
        _opnorm(g_vvt),
        _opnorm(g_vvv),
    ])


def estimate_deltas(source, law, rho, m_f, horizon, grid: DeltaGrid = DeltaGrid(),
                    baseline: Optional[BaselineCertificate] = None, model=None,
                    cold_start=None):
    """Grid maxima of the nine base quantities, times the safety factor.

    ``source`` is a stream (anything with ``problem_at(t)`` and
    ``cold_start(t)``) or a single oracle, in which case ``model`` and
    ``cold_start`` are required. ``law`` is the baseline update law whose
    rate is bounded. Region ``variable`` samples ``|v - v*(t)| <= rho/m_f``;
    region ``gradient`` samples points with ``|grad_v Phi| <= rho``.

    Returns ``(DeltaBase, info)`` where ``info`` counts samples and skips.
    """
    if not hasattr(source, "problem_at"):
        if model is None or cold_start is None:
            raise ConfigError("a bare oracle needs model and cold_start")
        source = StaticStream(source, model, cold_start)
    if not (rho > 0 and m_f > 0 and horizon >= 0):
        raise ConfigError("rho, m_f must be positive and horizon nonnegative")
    dV = (baseline.dV if baseline is not None else (lambda g: g))
    times = np.linspace(0.0, horizon, grid.times) if grid.times > 1 else np.array([0.0])
    radius = rho / m_f if grid.region == "variable" else rho
    radii = radius * np.arange(1, grid.radii + 1) / grid.radii
    best = np.zeros(9)
    total = skipped = 0
    v_prev = None
    for t in times:
        oracle, model_t = source.problem_at(float(t))
        if not getattr(oracle, "has_higher", False):
            raise ConfigError("oracle does not provide grad_vtt/grad_vvt/grad_vvv")
        if not getattr(model_t, "has_higher", True):
            raise ConfigError("prediction model does not provide grad_vtt_hat/grad_vvt_hat")
        v_star = None
        if v_prev is not None and oracle.feasible(t, v_prev):
            try:
                v_star = newton_oracle(oracle, t, v_prev)
            except NumericError:
                v_star = None
        if v_star is None:
            v_star = newton_oracle(oracle, t, source.cold_start(t))
        v_prev = v_star
        n = len(v_star)
        points = [v_star]
        for d in grid.directions(n):
            for r in radii:
                if grid.region == "variable":
                    points.append(v_star + r * d)
                else:
                    try:
                        points.append(newton_oracle(oracle, t, v_star, tilt=r * d))
                    except NumericError:
                        points.append(None)
        for v in points:
            total += 1
            if v is None or not oracle.feasible(t, v):
                skipped += 1
                continue
            q = _sample_quantities(oracle, model_t, law, dV, t, v)
            if not np.all(np.isfinite(q)):
                skipped += 1
                continue
            np.maximum(best, q, out=best)
    if skipped > 0.5 * total:
        raise ConfigError(
            f"{skipped} of {total} delta-grid points were infeasible; shrink rho or the grid")
    names = [f.name for f in fields(DeltaBase)]
    base = DeltaBase(**dict(zip(names, (grid.safety_factor * best).tolist())))
    return base, {"samples": total, "skipped": skipped}


def exact_deltas(**values):
    """DeltaBase from known closed-form bounds; unspecified entries are zero."""
    names = [f.name for f in fields(DeltaBase)]
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigError(f"unknown delta names: {sorted(unknown)}")
    return DeltaBase(**{k: float(values.get(k, 0.0)) for k in names})


def certify_scenario(scenario, sim, grid: DeltaGrid = DeltaGrid(), target_rho=None,
                     epsilon_rho=None, stream=None):
    """Estimate the deltas over ``scenario`` and evaluate the certificate.

    ``sim.method`` must be an L1 method. History-dependent streams (the
    navigation scenario) must be passed in after a run so the deltas are
    sampled along the realized robot path.
    Returns ``(TubeCertificate, info)``.
    """
    law = sim.build_optimizer()
    if not hasattr(law, "baseline"):
        raise ConfigError(f"certification needs an l1ao_* method, got {sim.method!r}")
    base_law = law.baseline
    if stream is None:
        stream = scenario.new_stream()
    v0 = sim.v0 if sim.v0 is not None else scenario.default_v0
    oracle0, _ = stream.problem_at(0.0)
    grad0 = oracle0.grad_v(0.0, v0)
    if base_law.name == "modified_pcip":
        # alpha_lo/alpha_hi do not depend on rho, so any placeholder works here
        probe = modified_pcip_certificate(base_law.P, base_law.epsilon, base_law.epsilon)
        rho, _ = rho_from(probe, grad0, epsilon_rho, target_rho)
    else:
        rho, _ = rho_from(pcip_certificate(base_law.P), grad0, epsilon_rho, target_rho)
    baseline = baseline_certificate(base_law, rho)
    n_v = len(_vec(v0))
    l1 = sim.l1
    if len(l1.A_s) == 1 and n_v > 1:
        l1 = L1Config(np.full(n_v, l1.A_s[0]), l1.T_s, l1.omega)
    base, info = estimate_deltas(stream, base_law, rho, scenario.m_f, sim.t_f, grid, baseline)
    cert = certify(baseline, base, l1, scenario.m_f, n_v, grad0, rho=rho)
    return cert, info

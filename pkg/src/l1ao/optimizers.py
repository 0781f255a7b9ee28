"""Continuous-time update laws: PCIP, modified PCIP and the L1 augmentation.

Every law returns a rate ``vdot`` for the optimization variable. The
baselines are stateless; the L1 augmentation keeps an
:class:`AdaptationState` that the owning simulation loop mutates.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation
from .problem import _solve, _vec

__all__ = [
    "gain_matrix",
    "PcipConfig",
    "ModifiedPcipConfig",
    "L1Config",
    "Pcip",
    "ModifiedPcip",
    "pcip_rate",
    "modified_pcip_rate",
    "mu",
    "AdaptationState",
    "l1_sample_update",
    "l1_continuous_rates",
    "l1_total_rate",
    "L1Augmentation",
]


def gain_matrix(P, n=None):
    """Coerce a scalar, diagonal list or full matrix into an (n, n) gain."""
    P = np.asarray(P, dtype=float)
    if P.ndim == 0:
        if n is None:
            n = 1
        return float(P) * np.eye(n)
    if P.ndim == 1:
        return np.diag(P)
    if P.ndim == 2 and P.shape[0] == P.shape[1]:
        return P.copy()
    raise ConfigError(f"gain must be scalar, vector or square matrix, got shape {P.shape}")


def _check_gain(P):
    if not np.allclose(P, P.T, rtol=0, atol=1e-12):
        raise ConfigError("gain P must be symmetric")
    beta = float(np.min(np.linalg.eigvalsh(P)))
    if not beta > 0:
        raise ConfigError(f"gain P must be positive definite (smallest eigenvalue {beta:.3g})")
    return beta


@dataclass(frozen=True)
class PcipConfig:
    P: np.ndarray

    def __post_init__(self):
        P = gain_matrix(self.P)
        object.__setattr__(self, "P", P)
        _check_gain(P)

    @property
    def beta(self):
        return float(np.min(np.linalg.eigvalsh(self.P)))


@dataclass(frozen=True)
class ModifiedPcipConfig:
    P: np.ndarray
    epsilon: float

    def __post_init__(self):
        P = gain_matrix(self.P)
        object.__setattr__(self, "P", P)
        _check_gain(P)
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def beta(self):
        return float(np.min(np.linalg.eigvalsh(self.P)))


@dataclass(frozen=True)
class L1Config:
    """Gradient-predictor matrix (diagonal), sampling period and filter bandwidth."""

    A_s: np.ndarray
    T_s: float
    omega: float

    def __post_init__(self):
        a = np.asarray(self.A_s, dtype=float)
        if a.ndim == 2:
            if np.any(a - np.diag(np.diag(a))):
                raise ConfigError("A_s must be diagonal")
            a = np.diag(a).copy()
        a = np.atleast_1d(a)
        if not np.all(a < 0):
            raise ConfigError(f"A_s must be Hurwitz (negative diagonal), got {a}")
        object.__setattr__(self, "A_s", a)
        if not self.T_s > 0:
            raise ConfigError(f"T_s must be positive, got {self.T_s}")
        if not self.omega > 0:
            raise ConfigError(f"omega must be positive, got {self.omega}")

    @property
    def mu(self):
        return mu(self.A_s, self.T_s)


class Pcip:
    """v' = -H^{-1} (grad_vt_hat + P grad)."""

    name = "pcip"

    def __init__(self, cfg: PcipConfig):
        self.cfg = cfg
        self.P = cfg.P

    def rate(self, g, H, gvt_hat):
        return _solve(H, gvt_hat + self.P @ g, negate=True)


class ModifiedPcip(Pcip):
    """v' = -H^{-1} (grad_vt_hat + P grad / max(|grad|, eps))."""

    name = "modified_pcip"

    def __init__(self, cfg: ModifiedPcipConfig):
        self.cfg = cfg
        self.P = cfg.P
        self.epsilon = cfg.epsilon

    def rate(self, g, H, gvt_hat):
        scale = max(float(np.linalg.norm(g)), self.epsilon)
        return _solve(H, gvt_hat + (self.P @ g) / scale, negate=True)


def pcip_rate(cfg, oracle, model, t, v):
    g, H, _ = oracle.first_order(t, v)
    return Pcip(cfg).rate(g, H, _vec(model.grad_vt_hat(t, v)))


def modified_pcip_rate(cfg, oracle, model, t, v):
    g, H, _ = oracle.first_order(t, v)
    return ModifiedPcip(cfg).rate(g, H, _vec(model.grad_vt_hat(t, v)))


def mu(A_s, T_s):
    """Adaptation gain (A_s^{-1}(I - e^{A_s T_s}))^{-1} e^{A_s T_s} for diagonal A_s."""
    a = np.asarray(A_s, dtype=float)
    if a.ndim == 2:
        if np.any(a - np.diag(np.diag(a))):
            raise ConfigError("A_s must be diagonal")
        a = np.diag(a)
    a = np.atleast_1d(a)
    if not np.all(a < 0):
        raise ConfigError(f"A_s must have a strictly negative diagonal, got {a}")
    if not T_s > 0:
        raise ConfigError(f"T_s must be positive, got {T_s}")
    e = np.exp(a * T_s)
    # -expm1 keeps 1 - e^{aT} accurate for small aT
    return np.diag(a * e / -np.expm1(a * T_s))


@dataclass
class AdaptationState:
    grad_hat: np.ndarray
    h_held: np.ndarray
    sigma_hat_held: np.ndarray
    vdot_a: np.ndarray
    last_sample_index: int = -1

    @classmethod
    def initial(cls, grad0):
        grad0 = _vec(grad0).copy()
        z = np.zeros_like(grad0)
        return cls(grad0, z.copy(), z.copy(), z.copy(), -1)


def _sample_index(t, T_s):
    i = int(round(t / T_s))
    if abs(t - i * T_s) > 1e-9 * max(1.0, abs(t)):
        raise ContractViolation(f"t={t!r} is not a sample instant of T_s={T_s!r}")
    return i


def _sample(state, mu_diag, g, H, i):
    if i == 0:
        state.h_held = np.zeros_like(state.grad_hat)
        state.sigma_hat_held = np.zeros_like(state.grad_hat)
    else:
        state.h_held = mu_diag * (state.grad_hat - g)
        state.sigma_hat_held = _solve(H, state.h_held)
    state.last_sample_index = i
    return state


def l1_sample_update(state: AdaptationState, cfg: L1Config, oracle, t, v):
    """Refresh the held estimates at the sample instant ``t = i * T_s``."""
    i = _sample_index(t, cfg.T_s)
    g, H, _ = oracle.first_order(t, v)
    return _sample(state, np.diag(cfg.mu), g, H, i)


def _rates(state, A_diag, omega, g, H, gvt_hat, vdot):
    pred = A_diag * (state.grad_hat - g) + gvt_hat + H @ vdot + state.h_held
    filt = -omega * (state.vdot_a + state.sigma_hat_held)
    return pred, filt


def l1_continuous_rates(state, cfg: L1Config, oracle, model, t, v, vdot_total):
    """Return ``(d grad_hat / dt, d vdot_a / dt)``.

    The filter line is the state-space form of ``vdot_a = C(s)(-sigma_hat)``
    with ``C(s) = omega / (s + omega)``.
    """
    g, H, _ = oracle.first_order(t, v)
    return _rates(state, cfg.A_s, cfg.omega, g, H, _vec(model.grad_vt_hat(t, v)),
                  _vec(vdot_total))


def l1_total_rate(baseline_rate, state: AdaptationState):
    vb = _vec(baseline_rate)
    if vb.shape != state.vdot_a.shape:
        raise ConfigError(f"dimension mismatch: {vb.shape} vs {state.vdot_a.shape}")
    return vb + state.vdot_a


class L1Augmentation:
    """L1 adaptive augmentation around a baseline update law.

    One Euler step is :meth:`rates` followed by :meth:`advance`: sample
    update on sample instants, baseline rate, total rate with the current
    filter output, then the Euler advance of predictor and filter from the
    pre-step rates.
    """

    def __init__(self, baseline, cfg: L1Config, dt):
        self.baseline = baseline
        self.cfg = cfg
        self.dt = float(dt)
        ratio = cfg.T_s / self.dt
        self.steps_per_sample = int(round(ratio))
        if self.steps_per_sample < 1 or abs(ratio - self.steps_per_sample) > 1e-9 * ratio:
            raise ConfigError(
                f"T_s={cfg.T_s!r} must be a positive integer multiple of dt={dt!r}")
        self.mu_diag = np.diag(cfg.mu)
        self.state = None

    @property
    def name(self):
        return "l1ao_" + self.baseline.name

    def reset(self, grad0):
        n = len(_vec(grad0))
        if len(self.cfg.A_s) == 1 and n > 1:
            self.cfg = L1Config(np.full(n, self.cfg.A_s[0]), self.cfg.T_s, self.cfg.omega)
            self.mu_diag = np.diag(self.cfg.mu)
        elif len(self.cfg.A_s) != n:
            raise ConfigError(f"A_s has {len(self.cfg.A_s)} entries, problem has n_v={n}")
        self.state = AdaptationState.initial(grad0)

    def rates(self, k, g, H, gvt_hat):
        """Run the sample update if due and return ``(vdot, vdot_b)``."""
        st = self.state
        if k % self.steps_per_sample == 0:
            _sample(st, self.mu_diag, g, H, k // self.steps_per_sample)
        vb = self.baseline.rate(g, H, gvt_hat)
        return vb + st.vdot_a, vb

    def advance(self, g, H, gvt_hat, vdot):
        st = self.state
        pred, filt = _rates(st, self.cfg.A_s, self.cfg.omega, g, H, gvt_hat, vdot)
        st.grad_hat = st.grad_hat + self.dt * pred
        st.vdot_a = st.vdot_a + self.dt * filt

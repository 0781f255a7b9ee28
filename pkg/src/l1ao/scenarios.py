"""Concrete problems: a 1-D constrained tracking problem, planar navigation
toward a projected goal, and a synthetic constant-uncertainty system.

Each factory returns a :class:`Scenario` holding a stream factory, the
scenario's default :class:`~l1ao.simulation.SimConfig` and plotting hints.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .optimizers import L1Config, ModifiedPcipConfig, PcipConfig, gain_matrix
from .problem import (
    BarrierProblem,
    ConstraintSet,
    ExactModel,
    NominalModel,
    Penalty,
    StackedConstraints,
    TVFunction,
    ZeroModel,
)
from .simulation import SimConfig, StaticStream, newton_oracle

__all__ = [
    "Scenario",
    "example1",
    "example2",
    "synthetic",
    "local_freespace",
    "HalfPlanes",
    "RobotStream",
    "SCENARIOS",
]


@dataclass
class Scenario:
    name: str
    n_v: int
    stream_factory: Callable
    sim: SimConfig
    m_f: float
    params: dict = field(default_factory=dict)
    upper_bound: Optional[Callable] = None  # 1-D feasible region v <= upper_bound(t)
    sampler: Optional[Callable] = None  # rng -> (oracle, t, v) for derivative checks

    def derivative_samples(self, n, rng):
        """``n`` random ``(oracle, t, v)`` triples at feasible points."""
        if self.sampler is None:
            raise ConfigError(f"scenario {self.name!r} has no derivative sampler")
        return [self.sampler(rng) for _ in range(n)]

    def new_stream(self):
        return self.stream_factory()

    @property
    def default_v0(self):
        return self.sim.v0

    @property
    def oracle(self):
        """Oracle at t=0 (the only oracle for static scenarios)."""
        return self.new_stream().frame(0.0, self.sim.v0)[0]

    @property
    def model(self):
        return self.new_stream().frame(0.0, self.sim.v0)[1]

    def config(self, method=None, **changes):
        cfg = self.sim if method is None else self.sim.replace(method=method)
        return cfg.replace(**changes) if changes else cfg


def _zeros_fn(shape):
    return lambda t, v: np.zeros(shape)


# -- Example 1 ---------------------------------------------------------------


def example1(v0=-1.0, t_f=10.0, dt=1e-3, amplitude=3.0, frequency=3.0,
             prediction="nominal", method="l1ao_pcip", P=10.0, P_modified=None,
             epsilon=1.0, T_s=1e-3, omega=1e3, A_s=-1.0):
    """min v^2/2  s.t.  v + d(t) <= 0,  d(t) = amplitude * sin(frequency * t).

    The nominal prediction treats ``d`` as constant, so ``grad_vt_hat = 0``.
    """
    amp, w = float(amplitude), float(frequency)
    d = lambda t: amp * np.sin(w * t)
    dd = lambda t: amp * w * np.cos(w * t)
    ddd = lambda t: -amp * w * w * np.sin(w * t)

    objective = TVFunction(
        value=lambda t, v: 0.5 * float(v[0]) ** 2,
        grad_v=lambda t, v: np.array([v[0]], dtype=float),
        hess_vv=lambda t, v: np.ones((1, 1)),
        grad_vt=_zeros_fn(1),
        grad_t=lambda t, v: 0.0,
        grad_tt=lambda t, v: 0.0,
        grad_vtt=_zeros_fn(1),
        grad_vvt=_zeros_fn((1, 1)),
        grad_vvv=_zeros_fn((1, 1, 1)),
    )
    constraint = TVFunction(
        value=lambda t, v: float(v[0]) + d(t),
        grad_v=lambda t, v: np.ones(1),
        hess_vv=_zeros_fn((1, 1)),
        grad_vt=_zeros_fn(1),
        grad_t=lambda t, v: dd(t),
        grad_tt=lambda t, v: ddd(t),
        grad_vtt=_zeros_fn(1),
        grad_vvt=_zeros_fn((1, 1)),
        grad_vvv=_zeros_fn((1, 1, 1)),
    )
    oracle = BarrierProblem(objective, StackedConstraints([constraint]),
                            Penalty.constant(1.0), m_f=1.0)
    model = _model(prediction, oracle, ZeroModel(1))

    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    if not v0[0] + d(0.0) < 0:
        raise ConfigError(f"v0={v0[0]} is infeasible at t=0 (need v0 + d(0) < 0)")

    P_mod = P if P_modified is None else P_modified
    sim = SimConfig(
        dt=dt, t_f=t_f, v0=v0, method=method,
        pcip=PcipConfig(gain_matrix(P, 1)),
        modified_pcip=ModifiedPcipConfig(gain_matrix(P_mod, 1), epsilon),
        l1=L1Config(np.atleast_1d(A_s), T_s, omega),
    )
    factory = lambda: StaticStream(oracle, model, lambda t: np.array([-d(t) - 1.0]))

    def sampler(rng):
        t = rng.uniform(0.0, t_f)
        # log-uniform distance to the moving boundary, 1e-2 .. 5
        gap = math.exp(rng.uniform(math.log(1e-2), math.log(5.0)))
        return oracle, t, np.array([-d(t) - gap])

    return Scenario(
        name="example1", n_v=1, stream_factory=factory, sim=sim, m_f=1.0,
        params=dict(amplitude=amp, frequency=w, prediction=prediction),
        upper_bound=lambda t: -d(t), sampler=sampler,
    )


def _model(prediction, oracle, nominal):
    if prediction == "nominal":
        return nominal
    if prediction == "exact":
        return ExactModel(oracle)
    raise ConfigError(f"prediction must be 'nominal' or 'exact', got {prediction!r}")


# -- synthetic constant-sigma system ------------------------------------------


def synthetic(hessian=2.0, sigma=4.5, v0=0.0, t_f=1.0, dt=1e-3, method="l1ao_pcip",
              P=1.0, T_s=1e-3, omega=1e3, A_s=-1.0):
    """Phi(t, v) = (h/2) v^2 + h*sigma*t*v with a frozen-time prediction.

    The Hessian is the constant ``h`` and the matched uncertainty is the
    constant ``sigma`` everywhere.
    """
    h, s = float(hessian), float(sigma)
    k = h * s
    objective = TVFunction(
        value=lambda t, v: 0.5 * h * float(v[0]) ** 2 + k * t * float(v[0]),
        grad_v=lambda t, v: np.array([h * v[0] + k * t]),
        hess_vv=lambda t, v: np.full((1, 1), h),
        grad_vt=lambda t, v: np.array([k]),
        grad_vtt=_zeros_fn(1),
        grad_vvt=_zeros_fn((1, 1)),
        grad_vvv=_zeros_fn((1, 1, 1)),
    )
    oracle = BarrierProblem(objective, None, None, m_f=h)
    model = ZeroModel(1)
    sim = SimConfig(
        dt=dt, t_f=t_f, v0=np.atleast_1d(float(v0)), method=method,
        pcip=PcipConfig(gain_matrix(P, 1)),
        modified_pcip=ModifiedPcipConfig(gain_matrix(P, 1), 1.0),
        l1=L1Config(np.atleast_1d(A_s), T_s, omega),
    )
    factory = lambda: StaticStream(oracle, model, lambda t: np.zeros(1))
    sampler = lambda rng: (oracle, rng.uniform(0.0, t_f), rng.uniform(-5.0, 5.0, size=1))
    return Scenario(name="synthetic", n_v=1, stream_factory=factory, sim=sim, m_f=h,
                    params=dict(hessian=h, sigma=s), sampler=sampler)


# -- Example 2: navigation toward a projected goal ----------------------------


def local_freespace(x_c, obstacles):
    """Separating half-planes ``a^T x <= b`` between the robot and each disc.

    Each boundary is orthogonal to the robot-to-center direction and passes
    through the midpoint of the gap between the robot and the disc.
    """
    x_c = np.asarray(x_c, dtype=float)
    out = []
    for center, radius in obstacles:
        delta = np.asarray(center, dtype=float) - x_c
        D = float(np.linalg.norm(delta))
        if D <= radius:
            raise ConfigError(f"robot at {x_c} is inside obstacle {tuple(center)}, r={radius}")
        a = delta / D
        out.append((a, float(a @ (x_c + a * (D - radius) / 2.0))))
    return out


class HalfPlanes(ConstraintSet):
    """Midpoint half-planes of a robot moving at constant velocity ``u``.

    ``f_j(t, x) = a_j^T (x - p(t)) - (D_j - r_j)/2`` with ``p(t) = x_c +
    u (t - t_ref)``, ``a_j`` the unit vector from ``p`` to obstacle ``j`` and
    ``D_j`` its distance. All partials are exact for the linear robot model.
    """

    has_higher = True

    def __init__(self, x_c, u, t_ref, centers, radii):
        self.x_c = np.asarray(x_c, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.t_ref = float(t_ref)
        self.centers = centers
        self.radii = radii
        self.n_constraints = len(radii)
        self._cache = None

    def _geometry(self, t):
        # Newton evaluates many points at one t; memoize the last time only
        cached = self._cache
        if cached is not None and cached[0] == t:
            return cached[1]
        p = self.x_c + self.u * (t - self.t_ref)
        delta = self.centers - p
        D = np.sqrt(np.einsum("ij,ij->i", delta, delta))
        if (D <= self.radii).any():
            j = int(np.flatnonzero(D <= self.radii)[0])
            raise ConfigError(f"robot at {p} collides with obstacle {j}")
        a = delta / D[:, None]
        Ddot = a @ -self.u
        adot = (-self.u[None, :] - a * Ddot[:, None]) / D[:, None]
        geo = (p, a, D, Ddot, adot, 0.5 * (D - self.radii))
        self._cache = (t, geo)
        return geo

    def values(self, t, v):
        p, a, _, _, _, half_gap = self._geometry(t)
        return a @ (v - p) - half_gap

    def jet(self, t, v):
        p, a, D, Ddot, adot, half_gap = self._geometry(t)
        r = v - p
        f = a @ r - half_gap
        f_t = adot @ r + 0.5 * Ddot
        return f, f_t, a, None, adot

    def higher(self, t, v):
        p, a, D, Ddot, adot, _ = self._geometry(t)
        n = len(v)
        Dddot = (self.u @ self.u - Ddot**2) / D
        addot = (-2.0 * adot * Ddot[:, None] - a * Dddot[:, None]) / D[:, None]
        f_tt = addot @ (v - p) + 1.5 * Dddot
        m = len(D)
        return f_tt, addot, np.zeros((m, n, n)), np.zeros((m, n, n, n))


DEFAULT_OBSTACLES = (((6.0, 6.0), 2.0), ((-6.0, 6.0), 2.0))


def _target(radius, t_f):
    """Position, velocity and acceleration of the orbiting target."""
    Om = 2.0 * np.pi / t_f
    memo = [(None, None)]

    def unit(t):
        # every oracle call at one t needs the same point on the circle;
        # one tuple read/write keeps the memo safe under concurrent use
        cached = memo[0]
        if cached[0] != t:
            c, s = math.cos(Om * t), math.sin(Om * t)
            cached = (t, (np.array([c, s]), np.array([-s, c])))
            memo[0] = cached
        return cached[1]

    pos = lambda t: radius * unit(t)[0]
    vel = lambda t: radius * Om * unit(t)[1]
    acc = lambda t: -radius * Om * Om * unit(t)[0]
    return pos, vel, acc


def _tracking_objective(pos, vel, acc, moving=True):
    """1/2 |x - x_d(t)|^2; with ``moving=False`` the target velocity is dropped."""
    z2 = _zeros_fn(2)
    eye = np.eye(2)
    eye.flags.writeable = False

    def value(t, v):
        r = v - pos(t)
        return 0.5 * float(r @ r)

    return TVFunction(
        value=value,
        grad_v=lambda t, v: v - pos(t),
        hess_vv=lambda t, v: eye,
        grad_vt=(lambda t, v: -vel(t)) if moving else z2,
        grad_vtt=(lambda t, v: -acc(t)) if moving else z2,
        grad_vvt=_zeros_fn((2, 2)),
        grad_vvv=_zeros_fn((2, 2, 2)),
    )


class RobotStream:
    """Closed-loop stream: the robot follows the optimizer's projected goal.

    At each step the local free space is regenerated from the robot position
    ``x_c``; the robot then advances by ``x_c' = -k_r (x_c - v)``. The robot
    velocity enters both the true and the predicted ``grad_vt`` (it is known
    data) unless ``model_robot_terms`` is false.
    """

    def __init__(self, params):
        self.p = params
        self.x_c = np.asarray(params["robot_start"], dtype=float).copy()
        self.history = []
        self._cache = None

    def _velocity(self, v):
        return -self.p["k_r"] * (self.x_c - v)

    def _build(self, x_c, u, t):
        p = self.p
        cons = HalfPlanes(x_c, u, t, p["centers"], p["radii"])
        oracle = BarrierProblem(p["objective"], cons, p["penalty"], m_f=1.0)
        if p["prediction"] == "exact":
            return oracle, ExactModel(oracle)
        if p["model_robot_terms"]:
            cons_hat = cons
        else:
            cons_hat = HalfPlanes(x_c, np.zeros_like(u), t, p["centers"], p["radii"])
        nominal = BarrierProblem(p["objective_hat"], cons_hat, p["penalty"], m_f=1.0)
        return oracle, NominalModel(nominal)

    def frame(self, t, v):
        u = self._velocity(np.asarray(v, dtype=float))
        self._cache = (t, self.x_c.copy(), u)
        return self._build(self.x_c, u, t)

    def advance(self, t, dt, v):
        u = self._velocity(np.asarray(v, dtype=float))
        self.history.append((t, self.x_c.copy(), u.copy()))
        self.x_c = self.x_c + dt * u

    def cold_start(self, t):
        # the robot position is interior to its own free space
        return self._state_at(t)[1].copy()

    def random_frame(self, rng, t_f):
        """Oracle for a random collision-free robot state, plus a feasible point.

        Used by derivative checks to cover more of the state space than one
        closed-loop trajectory does.
        """
        p = self.p
        reach = 15.0
        if len(p["radii"]):
            reach = max(reach, float(np.abs(p["centers"]).max() + p["radii"].max()))
        span = 1.5 * reach
        while True:
            x_c = rng.uniform(-span, span, size=2)
            gaps = np.linalg.norm(p["centers"] - x_c, axis=1) - p["radii"]
            if not gaps.size or gaps.min() > 0.5:
                break
        u = rng.normal(scale=2.0, size=2)
        t = rng.uniform(0.0, t_f)
        oracle, _ = self._build(x_c, u, t)
        while True:
            v = x_c + rng.normal(scale=2.0, size=2)
            f = oracle.constraint_values(t, v)
            if not f.size or f.max() < -1e-3:
                return oracle, t, v

    def _state_at(self, t):
        hist = self.history
        if self._cache is not None and (not hist or t >= hist[-1][0] + 0.5 * self.p["dt"]):
            return self._cache
        if hist:
            k = int(np.clip(np.floor(t / self.p["dt"] + 1e-9), 0, len(hist) - 1))
            return hist[k]
        if self._cache is None:
            return (t, self.x_c, np.zeros(2))
        raise ConfigError("no robot history recorded yet")

    def problem_at(self, t):
        """Oracle and model at time ``t`` along the recorded robot path."""
        if not self.history and self._cache is None:
            raise ConfigError("no robot history recorded yet")
        t_ref, x_c, u = self._state_at(t)
        return self._build(x_c, u, t_ref)


def example2(t_f=50.0, dt=1e-3, radius=15.0, obstacles=DEFAULT_OBSTACLES,
             robot_start=(0.0, -10.0), k_r=1.0, penalty_scale=50.0, penalty_tau=50.0,
             v0=None, prediction="nominal", model_robot_terms=True,
             method="l1ao_pcip", P=1.0, P_modified=10.0, epsilon=0.1,
             T_s=1e-3, omega=50.0, A_s=-0.1):
    """Planar navigation toward a projected goal around disc obstacles.

    Cost ``1/2 |x - x_d(t)|^2 - (1/c(t)) sum_i log(b_i - a_i^T x)`` with an
    orbiting target ``x_d`` and ``c(t) = penalty_scale * exp(t / penalty_tau)``.
    The nominal prediction treats the target as static. ``v0=None`` starts
    the optimizer at the projected goal of ``t = 0``.
    """
    pos, vel, acc = _target(float(radius), float(t_f))
    obstacles = [(tuple(map(float, c)), float(r)) for c, r in obstacles]
    centers = np.array([c for c, _ in obstacles], dtype=float).reshape(-1, 2)
    radii = np.array([r for _, r in obstacles], dtype=float)
    if prediction not in ("nominal", "exact"):
        raise ConfigError(f"prediction must be 'nominal' or 'exact', got {prediction!r}")
    params = dict(
        objective=_tracking_objective(pos, vel, acc, moving=True),
        objective_hat=_tracking_objective(pos, vel, acc, moving=False),
        penalty=Penalty.exponential(penalty_scale, penalty_tau),
        centers=centers, radii=radii, robot_start=np.asarray(robot_start, dtype=float),
        k_r=float(k_r), prediction=prediction, model_robot_terms=bool(model_robot_terms),
        dt=float(dt), target=pos, target_velocity=vel, obstacles=obstacles,
    )
    local_freespace(params["robot_start"], obstacles)

    stream = RobotStream(params)
    if v0 is None:
        oracle, _ = stream.frame(0.0, params["robot_start"])
        v0 = newton_oracle(oracle, 0.0, params["robot_start"])
    v0 = np.asarray(v0, dtype=float).reshape(2)
    oracle, _ = stream.frame(0.0, v0)
    if not oracle.feasible(0.0, v0):
        raise ConfigError(f"initial goal {v0} is outside the initial local free space")

    sim = SimConfig(
        dt=dt, t_f=t_f, v0=v0, method=method,
        pcip=PcipConfig(gain_matrix(P, 2)),
        modified_pcip=ModifiedPcipConfig(gain_matrix(P_modified, 2), epsilon),
        l1=L1Config(np.broadcast_to(np.asarray(A_s, dtype=float), (2,)).copy(), T_s, omega),
    )
    sampler = lambda rng: RobotStream(params).random_frame(rng, t_f)
    return Scenario(name="example2", n_v=2, stream_factory=lambda: RobotStream(params),
                    sim=sim, m_f=1.0, params=params, sampler=sampler)


SCENARIOS = {"example1": example1, "example2": example2, "synthetic": synthetic}

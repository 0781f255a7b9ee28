"""YAML run configuration: strict schema, line-numbered diagnostics, builders."""

import importlib
import inspect
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .optimizers import L1Config, ModifiedPcipConfig, PcipConfig, gain_matrix
from .scenarios import SCENARIOS, Scenario
from .simulation import METHODS, SimConfig

__all__ = ["RunConfig", "load_config", "parse_config", "build", "build_method"]

Number = Union[float, List[float], List[List[float]]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScenarioSection(_Strict):
    name: Literal["example1", "example2", "synthetic", "custom"]
    factory: Optional[str] = None  # "module:function" for custom scenarios
    prediction: Optional[Literal["nominal", "exact"]] = None
    params: dict = Field(default_factory=dict)


class MethodSection(_Strict):
    name: Literal[METHODS]  # type: ignore[valid-type]
    P: Optional[Number] = None
    epsilon: Optional[float] = None
    T_s: Optional[float] = None
    omega: Optional[float] = None
    A_s: Optional[Number] = None


class SimSection(_Strict):
    dt: Optional[float] = None
    t_f: Optional[float] = None
    v0: Optional[Union[float, List[float]]] = None
    rng_seed: int = 0


class CertificationSection(_Strict):
    target_rho: Optional[float] = None
    epsilon_rho: Optional[float] = None
    grid_times: int = 201
    grid_radii: int = 8
    grid_angles: int = 16
    safety_factor: float = 1.1
    region: Literal["variable", "gradient"] = "variable"


class OutputSection(_Strict):
    directory: str = "out"
    plots: bool = True


class BenchSection(_Strict):
    methods: List[Union[Literal[METHODS], MethodSection]]  # type: ignore[valid-type]

    @field_validator("methods")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("bench.methods must list at least one method")
        return v


class RunConfig(_Strict):
    scenario: ScenarioSection
    method: MethodSection
    sim: SimSection = Field(default_factory=SimSection)
    certification: Optional[CertificationSection] = None
    output: OutputSection = Field(default_factory=OutputSection)
    bench: Optional[BenchSection] = None
    source: Optional[str] = Field(default=None, exclude=True)


# -- loading ------------------------------------------------------------------


def _node_at(node, loc):
    """Deepest YAML node along ``loc`` (pydantic error location)."""
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
            if nxt is None:
                # unknown key: point at the key itself
                nxt = next((k for k, _ in node.value if k.value == key), None)
            if nxt is None:
                break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int):
            if key >= len(node.value):
                break
            node = node.value[key]
        else:
            break
    return node


def _format_errors(err: ValidationError, root, source):
    lines = []
    for e in err.errors():
        loc = tuple(e["loc"])
        key = ".".join(str(p) for p in loc if not (isinstance(p, str) and ("[" in p or "'" in p)))
        where = ""
        if root is not None:
            node = _node_at(root, loc)
            where = f"line {node.start_mark.line + 1}: "
        lines.append(f"{source}: {where}{key or '<root>'}: {e['msg']}")
    return "\n".join(lines)


def parse_config(text, source="<config>") -> RunConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, source)) from None
    cfg.source = source
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# -- building -----------------------------------------------------------------


def _factory(sec: ScenarioSection):
    if sec.name != "custom":
        if sec.factory is not None:
            raise ConfigError("scenario.factory is only valid with name: custom")
        return SCENARIOS[sec.name]
    if not sec.factory or ":" not in sec.factory:
        raise ConfigError("custom scenario needs factory: 'module:function'")
    mod, _, fn = sec.factory.partition(":")
    try:
        return getattr(importlib.import_module(mod), fn)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import scenario factory {sec.factory!r}: {exc}") from None


def _call(factory, kwargs, label):
    sig = inspect.signature(factory)
    has_var = any(p.kind is p.VAR_KEYWORD for p in sig.parameters.values())
    unknown = [k for k in kwargs if k not in sig.parameters and not has_var]
    if unknown:
        raise ConfigError(f"scenario {label!r} has no parameter(s) {sorted(unknown)}")
    try:
        scenario = factory(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"scenario {label!r}: {exc}") from None
    if not isinstance(scenario, Scenario):
        raise ConfigError(f"scenario factory {label!r} did not return a Scenario")
    return scenario


def build_scenario(cfg: RunConfig) -> Scenario:
    sec = cfg.scenario
    factory = _factory(sec)
    kwargs = dict(sec.params)
    if sec.prediction is not None:
        kwargs["prediction"] = sec.prediction
    accepted = inspect.signature(factory).parameters
    # horizon, step and start shape the scenario itself (e.g. the target orbit)
    for key in ("dt", "t_f", "v0"):
        value = getattr(cfg.sim, key)
        if value is not None and key in accepted:
            if key in kwargs:
                raise ConfigError(f"sim.{key} and scenario.params.{key} are both set")
            kwargs[key] = value
    return _call(factory, kwargs, sec.factory or sec.name)


def build_method(base: SimConfig, m: MethodSection, n_v) -> SimConfig:
    """Apply a method section on top of the scenario's defaults."""
    changes = {"method": m.name}
    if m.name.endswith("modified_pcip"):
        cur = base.modified_pcip
        P = cur.P if (m.P is None and cur is not None) else m.P
        eps = m.epsilon if m.epsilon is not None else (cur.epsilon if cur is not None else None)
        if P is None or eps is None:
            raise ConfigError(f"method {m.name} needs P and epsilon")
        changes["modified_pcip"] = ModifiedPcipConfig(gain_matrix(P, n_v), eps)
    elif m.name.endswith("pcip"):
        if m.epsilon is not None:
            raise ConfigError(f"epsilon is not a parameter of method {m.name}")
        cur = base.pcip
        P = cur.P if (m.P is None and cur is not None) else m.P
        if P is None:
            raise ConfigError(f"method {m.name} needs P")
        changes["pcip"] = PcipConfig(gain_matrix(P, n_v))
    l1_keys = {k: getattr(m, k) for k in ("T_s", "omega", "A_s") if getattr(m, k) is not None}
    if m.name.startswith("l1ao_"):
        cur = base.l1
        vals = dict(A_s=None, T_s=None, omega=None)
        if cur is not None:
            vals.update(A_s=cur.A_s, T_s=cur.T_s, omega=cur.omega)
        vals.update(l1_keys)
        if any(v is None for v in vals.values()):
            raise ConfigError(f"method {m.name} needs A_s, T_s and omega")
        A = np.asarray(vals["A_s"], dtype=float)
        if A.ndim == 0:
            A = np.full(n_v, float(A))
        vals["A_s"] = A
        changes["l1"] = L1Config(**vals)
    elif l1_keys:
        raise ConfigError(f"{sorted(l1_keys)} only apply to l1ao_* methods")
    return base.replace(**changes)


def build(cfg: RunConfig, method: Optional[MethodSection] = None):
    """Return ``(scenario, SimConfig)`` for ``method`` (default: the config's)."""
    scenario = build_scenario(cfg)
    sim = build_method(scenario.sim, method or cfg.method, scenario.n_v)
    sim = sim.replace(rng_seed=cfg.sim.rng_seed)
    if cfg.sim.v0 is not None:
        v0 = np.atleast_1d(np.asarray(cfg.sim.v0, dtype=float))
        if v0.shape != (scenario.n_v,):
            raise ConfigError(f"sim.v0 has {v0.size} entries, scenario has n_v={scenario.n_v}")
        sim = sim.replace(v0=v0)
    return scenario, sim


def bench_methods(cfg: RunConfig):
    if cfg.bench is None:
        names = ["oracle_only"] + ([cfg.method.name] if cfg.method.name != "oracle_only" else [])
        return [MethodSection(name=n) for n in names]
    return [MethodSection(name=m) if isinstance(m, str) else m for m in cfg.bench.methods]

"""Scenario configuration: YAML files validated into dataclasses.

Units: positions in m, times in s, inputs in the model's native units
(m/s^2 for the double integrator; rad/s and m/s^2 for the unicycle).
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import stl
from .hocbf import HocbfConfig
from .systems import MODELS, InputBounds

ABLATIONS = ("bn-fixedp", "bn-varp", "feasibn-varp", "fcnet", "hocbf-baseline")
# keys that do not change what a checkpoint means
_UNHASHED = {("train", "iters"), ("train", "seed")}


class ConfigError(ValueError):
    """The configuration does not match the schema or is inconsistent."""


@dataclass
class PolicyConfig:
    ablation: str = "feasibn-varp"
    memory: bool = False
    q_mode: str = "identity"
    cost_weight: float = 0.003
    qp_bounds_train: bool = False

    @property
    def multiplier_mode(self) -> str:
        return "fixed" if self.ablation in ("bn-fixedp", "hocbf-baseline") else "varying"

    @property
    def feasibility(self) -> bool:
        return self.ablation == "feasibn-varp"

    @property
    def uses_qp(self) -> bool:
        return self.ablation != "fcnet"

    @property
    def p2_floor(self) -> bool:
        """Learned variants lift p2 so every row with psi1 > 0 admits u = 0."""
        return self.uses_qp and self.ablation != "hocbf-baseline"

    @property
    def qp_bounds(self) -> bool:
        """Input bounds inside the QP: always on for the untrained baseline."""
        return self.ablation == "hocbf-baseline" or self.qp_bounds_train


@dataclass
class TrainConfig:
    iters: int = 500
    V: int = 10
    lr: float = 1e-3
    seed: int = 0
    width: int = 64
    depth: int = 3
    lstm_hidden: int = 32


@dataclass
class ScenarioConfig:
    name: str
    system: str
    dt: float
    horizon: float
    init_low: tuple[float, ...]
    init_high: tuple[float, ...]
    u_min: tuple[float, ...]
    u_max: tuple[float, ...]
    predicates: dict[str, stl.Predicate]
    tasks: list[dict]
    beta: float = 0.5
    fea_cap: float = 1.0
    hocbf: HocbfConfig = field(default_factory=HocbfConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def K(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def bounds(self) -> InputBounds:
        return InputBounds(tuple(self.u_min), tuple(self.u_max))

    def formula(self):
        parts = []
        for t in self.tasks:
            kids = [stl.Pred(self.predicates[n]) for n in t["predicates"]]
            child = stl.conj(*kids)
            op = stl.F if t["op"] == "F" else stl.G
            parts.append(op(child, *t["interval"]))
        return stl.conj(*parts)

    def config_hash(self) -> str:
        d = copy.deepcopy(self.raw)
        for sec, key in _UNHASHED:
            d.get(sec, {}).pop(key, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, *, ablation=None, memory=None, iters=None, seed=None) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        if ablation is not None:
            raw.setdefault("policy", {})["ablation"] = ablation
        if memory is not None:
            raw.setdefault("policy", {})["memory"] = bool(memory)
        if iters is not None:
            raw.setdefault("train", {})["iters"] = int(iters)
        if seed is not None:
            raw.setdefault("train", {})["seed"] = int(seed)
        return parse_config(raw)


def _vec(d, key, n=None):
    try:
        v = tuple(float(a) for a in d[key])
    except KeyError:
        raise ConfigError(f"missing key {key!r}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"{key!r} must be a list of numbers") from None
    if n is not None and len(v) != n:
        raise ConfigError(f"{key!r} needs {n} entries, got {len(v)}")
    if not all(math.isfinite(a) for a in v):
        raise ConfigError(f"{key!r} has non-finite entries")
    return v


def _section(cls, d, name):
    d = d or {}
    if not isinstance(d, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    extra = set(d) - set(known)
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
    out = {}
    for k, v in d.items():
        want = type(getattr(cls(), k))
        try:
            out[k] = want(v) if want is not bool else _bool(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}.{k} must be {want.__name__}") from None
    return cls(**out)


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("on", "off", "true", "false"):
        return v.lower() in ("on", "true")
    raise ValueError(v)


def _predicate(d) -> stl.Predicate:
    if not isinstance(d, dict):
        raise ConfigError("each predicate must be a mapping")
    role = d.get("role")
    if role not in ("reach", "avoid"):
        raise ConfigError(f"predicate {d.get('name')!r}: role must be reach or avoid")
    gauge = d.get("gauge", "euclidean")
    try:
        p = stl.Predicate(name=str(d["name"]), sign=1, radius=float(d.get("radius", 1.0)),
                          center=_vec(d, "center", 2), gauge=gauge,
                          axes=_vec(d, "axes", 2) if "axes" in d else (1.0, 1.0),
                          power=int(d.get("power", 4)))
    except KeyError as e:
        raise ConfigError(f"predicate missing key {e}") from None
    except ValueError as e:
        raise ConfigError(f"predicate {d.get('name')!r}: {e}") from None
    if gauge == "superellipse" and min(p.axes) <= 0:
        raise ConfigError(f"predicate {p.name!r}: axes must be positive")
    return p.negate() if role == "avoid" else p


def parse_config(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = copy.deepcopy(raw)
    for key in ("name", "system", "dt", "horizon", "init_box", "input_bounds", "predicates", "tasks"):
        if key not in raw:
            raise ConfigError(f"missing key {key!r}")
    if raw["system"] not in MODELS:
        raise ConfigError(f"unknown system {raw['system']!r}")
    n = MODELS[raw["system"]].n
    try:
        dt, horizon = float(raw["dt"]), float(raw["horizon"])
    except (TypeError, ValueError):
        raise ConfigError("dt and horizon must be numbers") from None
    if not (dt > 0 and horizon > 0):
        raise ConfigError("dt and horizon must be positive")
    if abs(horizon / dt - round(horizon / dt)) > 1e-9:
        raise ConfigError("horizon must be a multiple of dt")
    box = raw["init_box"]
    lo, hi = _vec(box, "low", 2), _vec(box, "high", 2)
    if any(a > b for a, b in zip(lo, hi)):
        raise ConfigError("init_box low must not exceed high")
    ib = raw["input_bounds"]
    u_min, u_max = _vec(ib, "u_min", 2), _vec(ib, "u_max", 2)
    if any(a >= b for a, b in zip(u_min, u_max)):
        raise ConfigError("u_min must be below u_max")
    if any(a > 0 or b < 0 for a, b in zip(u_min, u_max)):
        raise ConfigError("input bounds must contain zero")
    preds = {}
    for d in raw["predicates"] or []:
        p = _predicate(d)
        if p.name in preds:
            raise ConfigError(f"duplicate predicate {p.name!r}")
        preds[p.name] = p
    tasks = []
    for t in raw["tasks"] or []:
        if not isinstance(t, dict) or t.get("op") not in ("F", "G"):
            raise ConfigError("each task needs op F or G")
        try:
            ta, tb = (float(a) for a in t["interval"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("task interval must be [ta, tb]") from None
        if not 0 <= ta < tb:
            raise ConfigError(f"task interval [{ta}, {tb}] is invalid")
        if tb > horizon + 1e-9:
            raise ConfigError(f"task interval end {tb} exceeds the horizon {horizon}")
        names = t.get("predicates") or []
        missing = [m for m in names if m not in preds]
        if not names or missing:
            raise ConfigError(f"task references unknown predicates {missing or names}")
        tasks.append({"op": t["op"], "interval": [ta, tb], "predicates": list(names)})
    if not tasks:
        raise ConfigError("at least one task is required")
    rob = raw.get("robustness", {}) or {}
    beta = float(rob.get("beta", 0.5))
    if not 0 <= beta <= 1:
        raise ConfigError("robustness.beta must lie in [0, 1]")
    hc = _section(HocbfConfig, raw.get("hocbf"), "hocbf")
    if hc.c <= 0 or hc.eps_omega <= 0 or hc.eps_p <= 0:
        raise ConfigError("hocbf constants must be positive")
    pol = _section(PolicyConfig, raw.get("policy"), "policy")
    if pol.ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {pol.ablation!r}; choose from {list(ABLATIONS)}")
    if pol.q_mode not in ("identity", "trainable"):
        raise ConfigError("policy.q_mode must be identity or trainable")
    if pol.cost_weight < 0:
        raise ConfigError("policy.cost_weight must be non-negative")
    tr = _section(TrainConfig, raw.get("train"), "train")
    if tr.iters < 0 or tr.V < 1 or tr.lr <= 0 or tr.width < 1 or tr.depth < 2 or tr.lstm_hidden < 1:
        raise ConfigError("train section out of range")
    cfg = ScenarioConfig(name=str(raw["name"]), system=raw["system"], dt=dt, horizon=horizon,
                         init_low=lo, init_high=hi, u_min=u_min, u_max=u_max, predicates=preds,
                         tasks=tasks, beta=beta, fea_cap=float(rob.get("fea_cap", 1.0)),
                         hocbf=hc, policy=pol, train=tr, raw=raw)
    try:
        cfg.formula()
    except stl.FragmentError as e:
        raise ConfigError(str(e)) from None
    if n != 4:  # pragma: no cover - both bundled models have four states
        raise ConfigError("unsupported state dimension")
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        bundled = resources.files("stlbarrier") / "scenarios" / f"{path.name}.yaml"
        if path.suffix == "" and bundled.is_file():
            path = Path(str(bundled))
        else:
            raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(raw)


def bundled_scenarios() -> list[str]:
    root = resources.files("stlbarrier") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def sample_x0(cfg: ScenarioConfig, V: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform positions in the Init box, zero velocity and heading."""
    pos = rng.uniform(cfg.init_low, cfg.init_high, size=(V, 2))
    return np.concatenate([pos, np.zeros((V, 2))], axis=1)


def describe(cfg: ScenarioConfig) -> dict:
    return {"name": cfg.name, "system": cfg.system, "dt": cfg.dt, "horizon": cfg.horizon,
            "policy": asdict(cfg.policy), "train": asdict(cfg.train), "hash": cfg.config_hash()}

"""Dense/LSTM layers, constraint-enforcing heads, Adam and checkpoints."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tape as T
from .tape import Tape, Var

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

ACTIVATIONS = {
    "relu": T.relu,
    "identity": lambda x: x,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "tanh": T.tanh,
}


class ShapeMismatch(ValueError):
    pass


@dataclass
class MlpSpec:
    sizes: tuple[int, ...]
    hidden: str = "relu"
    output: str = "identity"

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1


@dataclass
class ParamStore:
    """Named float64 parameter arrays plus Adam state."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def names(self) -> list[str]:
        return sorted(self.params)

    def bind(self, tape: Tape) -> dict[str, Var]:
        """Put every parameter on ``tape`` as a leaf."""
        return {k: tape.leaf(self.params[k], kind=f"param:{k}") for k in self.names()}

    def copy(self) -> "ParamStore":
        return ParamStore({k: a.copy() for k, a in self.params.items()},
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()}, self.step)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.names()])

    def n_values(self) -> int:
        return int(sum(a.size for a in self.params.values()))


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec, rng: np.random.Generator,
             zero: bool = False) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.sizes[i], spec.sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        if zero:
            W, b = np.zeros((fan_in, fan_out)), np.zeros(fan_out)
        else:
            W = rng.uniform(-bound, bound, (fan_in, fan_out))
            b = rng.uniform(-bound, bound, fan_out)
        store.add(f"{prefix}.W{i}", W)
        store.add(f"{prefix}.b{i}", b)


def mlp_forward(params, prefix: str, x, spec: MlpSpec):
    """Affine+activation stack; ``x`` has shape (..., sizes[0])."""
    if T.value(x).shape[-1] != spec.sizes[0]:
        raise ShapeMismatch(f"{prefix}: expected input width {spec.sizes[0]}, "
                            f"got {T.value(x).shape[-1]}")
    h = x
    for i in range(spec.n_layers):
        h = T.matmul(h, params[f"{prefix}.W{i}"]) + params[f"{prefix}.b{i}"]
        act = spec.output if i == spec.n_layers - 1 else spec.hidden
        h = ACTIVATIONS[act](h)
    return h


def bounded_head(raw, lo=None, hi=None):
    """Map an unconstrained output into (lo, hi); ``None`` means unbounded.

    Two-sided bounds use a scaled sigmoid, one-sided bounds a shifted softplus.
    """
    if lo is None and hi is None:
        return raw
    if lo is not None and hi is not None:
        if np.any(T.value(hi) - T.value(lo) <= 0):
            raise ValueError("bounded_head requires lo < hi")
        return lo + (hi - lo) * T.sigmoid(raw)
    if lo is not None:
        return lo + T.softplus(raw)
    return hi - T.softplus(raw)


def init_lstm(store: ParamStore, prefix: str, n_in: int, n_hidden: int, n_layers: int,
              rng: np.random.Generator, zero: bool = False) -> None:
    bound = 1.0 / np.sqrt(n_hidden)
    for layer in range(n_layers):
        width = n_in if layer == 0 else n_hidden
        shapes = {"Wx": (width, 4 * n_hidden), "Wh": (n_hidden, 4 * n_hidden), "b": (4 * n_hidden,)}
        for key, shp in shapes.items():
            val = np.zeros(shp) if zero else rng.uniform(-bound, bound, shp)
            store.add(f"{prefix}.l{layer}.{key}", val)


def lstm_step(params, prefix: str, h, c, x):
    """One LSTM cell update; gate order is (input, forget, cell, output)."""
    Wx, Wh, b = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]
    n_hidden = T.value(Wh).shape[0]
    if T.value(x).shape[-1] != T.value(Wx).shape[0] or T.value(h).shape[-1] != n_hidden:
        raise ShapeMismatch(f"{prefix}: inconsistent LSTM dimensions")
    z = T.matmul(x, Wx) + T.matmul(h, Wh) + b
    i = T.sigmoid(z[..., 0:n_hidden])
    f = T.sigmoid(z[..., n_hidden:2 * n_hidden])
    g = T.tanh(z[..., 2 * n_hidden:3 * n_hidden])
    o = T.sigmoid(z[..., 3 * n_hidden:])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new, h_new


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], cfg: AdamConfig) -> bool:
    """In-place bias-corrected Adam update.  Returns False if skipped on NaN."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient in %s; skipping Adam step", k)
            return False
    store.step += 1
    t = store.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k in store.names():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(store.params[k])
        m = store.m[k] = cfg.beta1 * store.m[k] + (1.0 - cfg.beta1) * g
        v = store.v[k] = cfg.beta2 * store.v[k] + (1.0 - cfg.beta2) * g * g
        store.params[k] = store.params[k] - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return True


def save_checkpoint(path: str | Path, store: ParamStore, config_hash: str, extra: dict | None = None) -> None:
    arrays = {}
    for k in store.names():
        arrays[f"param/{k}"] = store.params[k]
        arrays[f"adam_m/{k}"] = store.m[k]
        arrays[f"adam_v/{k}"] = store.v[k]
    meta = {"version": CHECKPOINT_VERSION, "step": store.step,
            "config_hash": config_hash, "extra": extra or {}}
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        store = ParamStore(step=int(meta["step"]))
        for key in data.files:
            if key.startswith("param/"):
                name = key[len("param/"):]
                store.params[name] = data[key].astype(np.float64)
                store.m[name] = data[f"adam_m/{name}"].astype(np.float64)
                store.v[name] = data[f"adam_v/{name}"].astype(np.float64)
    return store, meta

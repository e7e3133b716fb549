"""STL fragment, discrete-time robustness, and gauge predicates.

Formulas are immutable trees.  Negation is pushed into predicates when a
formula is built (``Not`` flips the predicate sign), so evaluators only see
``Pred``, ``And``, ``Or``, ``Eventually`` and ``Always`` nodes.

Both evaluators work on a whole batch of trajectories at once: the state
array has shape ``(..., K+1, n)`` and the result has shape ``(...)``.  The
exponential evaluator also accepts a tape ``Var`` and stays differentiable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .nn import tape as T

_BIG = 1e30
SINGULAR_OFFSET = 1e-9


class TrajectoryTooShort(ValueError):
    pass


class FragmentError(ValueError):
    """Formula is outside the supported fragment."""


# ---------------------------------------------------------------------------
# predicates


@dataclass(frozen=True)
class Predicate:
    """``h(x) = sign * (radius - gauge(l(x) - center))``.

    ``sign=+1`` describes a region to reach, ``sign=-1`` one to avoid.  The
    superellipse gauge is ``(sum |d_i/axes_i|^power)^(1/power)``.
    """

    name: str
    sign: int
    radius: float
    center: tuple[float, ...]
    gauge: str = "euclidean"
    axes: tuple[float, ...] = (1.0, 1.0)
    power: int = 4
    output: tuple[int, ...] = (0, 1)
    negated: bool = False

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.gauge not in ("euclidean", "superellipse"):
            raise ValueError(f"unknown gauge {self.gauge!r}")
        if len(self.center) != len(self.output):
            raise ValueError("center and output map dimensions differ")
        if self.gauge == "superellipse" and (self.power < 2 or self.power % 2):
            raise ValueError("superellipse power must be an even integer >= 2")

    def negate(self) -> "Predicate":
        return replace(self, sign=-self.sign, negated=not self.negated)

    @property
    def sup_h(self) -> float:
        """sup over the output space of h: R for reach predicates, +inf otherwise."""
        return self.radius if self.sign > 0 else math.inf

    # gauge pieces on a list of output components d_i --------------------
    def offsets(self, x, perturb: bool = True):
        d = [x[..., i] - c for i, c in zip(self.output, self.center)]
        if perturb:
            r2 = sum(T.value(di) ** 2 for di in d)
            d[0] = d[0] + np.where(r2 < SINGULAR_OFFSET ** 2, SINGULAR_OFFSET, 0.0)
        return d

    def sigma(self, d):
        if self.gauge == "euclidean":
            return T.sqrt(sum(di * di for di in d))
        p = self.power
        S = sum((di / a) ** p for di, a in zip(d, self.axes))
        return S ** (1.0 / p) if not T.is_var(S) else T.exp(T.log(S) / p)

    def sigma_grad(self, d):
        """Gradient of the gauge w.r.t. the offset, as a list of components."""
        if self.gauge == "euclidean":
            n = self.sigma(d)
            return [di / n for di in d]
        p = self.power
        S = sum((di / a) ** p for di, a in zip(d, self.axes))
        scale = _rpow(S, 1.0 / p - 1.0)
        return [scale * (di / a) ** (p - 1) / a for di, a in zip(d, self.axes)]

    def sigma_hess_quad(self, d, w):
        """w^T (Hessian of the gauge) w."""
        if self.gauge == "euclidean":
            r2 = sum(di * di for di in d)
            n = T.sqrt(r2)
            dw = sum(di * wi for di, wi in zip(d, w))
            ww = sum(wi * wi for wi in w)
            return (ww - dw * dw / r2) / n
        p = self.power
        S = sum((di / a) ** p for di, a in zip(d, self.axes))
        qw = sum((di / a) ** (p - 1) / a * wi for di, a, wi in zip(d, self.axes, w))
        diag = sum((di / a) ** (p - 2) * wi * wi / (a * a) for di, a, wi in zip(d, self.axes, w))
        return (1 - p) * _rpow(S, 1.0 / p - 2.0) * qw * qw + (p - 1) * _rpow(S, 1.0 / p - 1.0) * diag

    def h(self, x, perturb: bool = False):
        """Evaluate on states with the state dimension last."""
        return self.sign * (self.radius - self.sigma(self.offsets(x, perturb)))

    def to_dict(self) -> dict:
        return {"name": self.name, "sign": self.sign, "radius": self.radius,
                "center": list(self.center), "gauge": self.gauge, "axes": list(self.axes),
                "power": self.power, "output": list(self.output), "negated": self.negated}

    @classmethod
    def from_dict(cls, d: dict) -> "Predicate":
        return cls(name=d["name"], sign=int(d["sign"]), radius=float(d["radius"]),
                   center=tuple(float(c) for c in d["center"]), gauge=d.get("gauge", "euclidean"),
                   axes=tuple(float(a) for a in d.get("axes", (1.0, 1.0))),
                   power=int(d.get("power", 4)), output=tuple(int(i) for i in d.get("output", (0, 1))),
                   negated=bool(d.get("negated", False)))


def _rpow(S, k):
    if T.is_var(S):
        return T.exp(k * T.log(S))
    return np.asarray(S, dtype=np.float64) ** k


def eval_predicate(p: Predicate, x) -> np.ndarray:
    return p.h(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# formula tree


@dataclass(frozen=True)
class Pred:
    predicate: Predicate


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


@dataclass(frozen=True)
class Eventually:
    child: object
    ta: float
    tb: float

    def __post_init__(self):
        _check_interval(self.ta, self.tb)


@dataclass(frozen=True)
class Always:
    child: object
    ta: float
    tb: float

    def __post_init__(self):
        _check_interval(self.ta, self.tb)


Formula = Union[Pred, And, Or, Eventually, Always]
TEMPORAL = (Eventually, Always)


def _check_interval(ta, tb):
    if not (0 <= ta < tb):
        raise FragmentError(f"invalid interval [{ta}, {tb}]")


def Not(f) -> Pred:
    if not isinstance(f, Pred):
        raise FragmentError("negation is only allowed on predicates")
    return Pred(f.predicate.negate())


def conj(*children) -> Formula:
    return children[0] if len(children) == 1 else And(tuple(children))


def disj(*children) -> Formula:
    return children[0] if len(children) == 1 else Or(tuple(children))


def F(child, ta, tb) -> Eventually:
    return Eventually(child, float(ta), float(tb))


def G(child, ta, tb) -> Always:
    return Always(child, float(ta), float(tb))


def _is_predicate_level(f) -> bool:
    if isinstance(f, Pred):
        return True
    if isinstance(f, (And, Or)):
        return all(_is_predicate_level(c) for c in f.children)
    return False


def validate_fragment(f) -> None:
    """Temporal operators wrap predicate-level formulas, joined by top-level conjunction."""
    tops = f.children if isinstance(f, And) and not _is_predicate_level(f) else (f,)
    for t in tops:
        if isinstance(t, TEMPORAL):
            if not _is_predicate_level(t.child):
                raise FragmentError("temporal operators may only wrap predicate-level formulas")
        elif not _is_predicate_level(t):
            raise FragmentError("disjunction of temporal subformulas is outside the fragment")


def horizon(f) -> float:
    if isinstance(f, TEMPORAL):
        return f.tb
    if isinstance(f, (And, Or)):
        return max((horizon(c) for c in f.children), default=0.0)
    return 0.0


def predicates(f) -> list[Predicate]:
    if isinstance(f, Pred):
        return [f.predicate]
    if isinstance(f, TEMPORAL):
        return predicates(f.child)
    return [p for c in f.children for p in predicates(c)]


def to_dict(f) -> dict:
    if isinstance(f, Pred):
        return {"op": "pred", "predicate": f.predicate.to_dict()}
    if isinstance(f, (And, Or)):
        return {"op": "and" if isinstance(f, And) else "or",
                "children": [to_dict(c) for c in f.children]}
    return {"op": "F" if isinstance(f, Eventually) else "G",
            "interval": [f.ta, f.tb], "child": to_dict(f.child)}


def from_dict(d: dict):
    op = d["op"]
    if op == "pred":
        return Pred(Predicate.from_dict(d["predicate"]))
    if op in ("and", "or"):
        kids = tuple(from_dict(c) for c in d["children"])
        return And(kids) if op == "and" else Or(kids)
    if op in ("F", "G"):
        ta, tb = d["interval"]
        return (F if op == "F" else G)(from_dict(d["child"]), ta, tb)
    raise FragmentError(f"unknown node {op!r}")


# ---------------------------------------------------------------------------
# robustness


@dataclass
class Trajectory:
    dt: float
    states: np.ndarray
    inputs: np.ndarray | None = None
    margins: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return T.value(self.states).shape[-2] - 1


def interval_indices(ta: float, tb: float, dt: float) -> tuple[int, int]:
    """Inclusive sample range ceil(ta/dt) .. floor(tb/dt), robust to float noise."""
    return math.ceil(ta / dt - 1e-9), math.floor(tb / dt + 1e-9)


def conj_exp(values, beta: float = 0.5, mask=None, empty: float = 0.0):
    """Exponential conjunction over the last axis.

    ``mask`` (bool, same shape) excludes entries from both the minimum and the
    average; rows with no admitted entry evaluate to ``empty``.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if T.value(values).shape[-1] == 0:
        raise ValueError("conj_exp of an empty list")
    if mask is None:
        rmin = T.amin(values, axis=-1)
        vals = values
        count = T.value(values).shape[-1]
        weights = None
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), T.value(values).shape)
        rmin = T.amin(T.where(mask, values, _BIG), axis=-1)
        # masked entries are replaced by the minimum so they stay finite
        vals = T.where(mask, values, T.stack([rmin], axis=-1))
        weights = mask.astype(np.float64)
        count = np.maximum(weights.sum(axis=-1), 1.0)
    rb = T.stack([rmin], axis=-1)
    absmin = T.abs(rb)
    den = T.where(T.value(absmin) > 0, absmin, 1.0)
    with np.errstate(over="ignore"):  # subnormal |rmin|: the ratio overflows and E -> 0, its limit
        E = T.exp(-(vals - rb) / den)
    eff = rb + absmin * (1.0 - E)
    if weights is not None:
        eff = eff * weights
    avg = T.sum(eff, axis=-1) / count
    out = beta * rmin + (1.0 - beta) * avg
    if mask is not None:
        out = T.where(mask.any(axis=-1), out, empty)
    return out


def _exp_and(beta):
    return lambda v: conj_exp(v, beta)


def _min_and(v):
    return T.amin(v, axis=-1)


def _window_rob(f, X, agg_and):
    """Robustness of a predicate-level formula at every sample of X (..., W, n)."""
    if isinstance(f, Pred):
        return f.predicate.h(X)
    parts = [_window_rob(c, X, agg_and) for c in f.children]
    stacked = T.stack(parts, axis=-1)
    if isinstance(f, And):
        return agg_and(stacked)
    if isinstance(f, Or):
        return -agg_and(-stacked)
    raise FragmentError(f"unexpected node {type(f).__name__} under a temporal operator")


def _rob(f, X, k, dt, agg_and):
    K = T.value(X).shape[-2] - 1
    if isinstance(f, TEMPORAL):
        lo, hi = interval_indices(f.ta, f.tb, dt)
        if k + hi > K:
            raise TrajectoryTooShort(f"need sample {k + hi}, trajectory ends at {K}")
        vals = _window_rob(f.child, X[..., k + lo:k + hi + 1, :], agg_and)
        return agg_and(vals) if isinstance(f, Always) else -agg_and(-vals)
    if isinstance(f, Pred):
        if k > K:
            raise TrajectoryTooShort(f"need sample {k}, trajectory ends at {K}")
        return f.predicate.h(X[..., k, :])
    parts = T.stack([_rob(c, X, k, dt, agg_and) for c in f.children], axis=-1)
    return agg_and(parts) if isinstance(f, And) else -agg_and(-parts)


def _states(traj, dt):
    if isinstance(traj, Trajectory):
        return traj.states, traj.dt
    if dt is None:
        raise ValueError("dt is required when passing a raw state array")
    return traj, dt


def robustness_classical(f, traj, t: float = 0.0, dt: float | None = None):
    """Min/max robustness on the sampled trajectory."""
    X, dt = _states(traj, dt)
    X = np.asarray(T.value(X), dtype=np.float64)
    return _rob(f, X, int(round(t / dt)), dt, _min_and)


def robustness_exp(f, traj, t: float = 0.0, beta: float = 0.5, dt: float | None = None):
    """Exponential robustness; F and Or go through De Morgan on ``conj_exp``."""
    X, dt = _states(traj, dt)
    return _rob(f, X, int(round(t / dt)), dt, _exp_and(beta))

"""Control-affine robot models and relative-degree-2 barrier derivatives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .nn import tape as T
from .stl import Predicate, SINGULAR_OFFSET


class SingularGradient(ValueError):
    """The gauge gradient is undefined (output exactly at the predicate center)."""


@dataclass(frozen=True)
class InputBounds:
    u_min: tuple[float, ...]
    u_max: tuple[float, ...]

    def __post_init__(self):
        if len(self.u_min) != len(self.u_max) or any(a >= b for a, b in zip(self.u_min, self.u_max)):
            raise ValueError("input bounds need u_min < u_max elementwise")


@dataclass(frozen=True)
class BarrierDerivatives:
    b: object
    bdot: object
    bddot_drift: object
    input_gain: object  # (..., q)


class SystemModel:
    name: str
    n: int
    q: int
    output: tuple[int, ...] = (0, 1)
    state_names: tuple[str, ...]
    relative_degree: int = 2

    def f(self, x):
        raise NotImplementedError

    def g(self, x) -> np.ndarray:
        raise NotImplementedError

    def output_velocity(self, x) -> list:
        raise NotImplementedError

    def output_accel(self, x) -> tuple[list, list]:
        """Drift part of the output acceleration and its input matrix (rows: outputs)."""
        raise NotImplementedError

    def step(self, x, u, dt: float):
        """Forward-Euler update with the input held over the interval."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        return x + dt * (self.f(x) + T.matmul(u, self.g(None).T))


class DoubleIntegrator(SystemModel):
    name = "double_integrator"
    n, q = 4, 2
    state_names = ("x", "y", "vx", "vy")
    _A = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
    _B = np.array([[0, 0], [0, 0], [1, 0], [0, 1]], dtype=float)

    def f(self, x):
        return T.matmul(x, self._A.T)

    def g(self, x):
        return self._B

    def output_velocity(self, x):
        return [x[..., 2], x[..., 3]]

    def output_accel(self, x):
        zero = np.zeros(T.value(x).shape[:-1])
        return [zero, zero], [[1.0, 0.0], [0.0, 1.0]]


class Unicycle(SystemModel):
    name = "unicycle"
    n, q = 4, 2
    state_names = ("x", "y", "theta", "v")
    _B = np.array([[0, 0], [0, 0], [1, 0], [0, 1]], dtype=float)

    def f(self, x):
        th, v = x[..., 2], x[..., 3]
        zero = np.zeros(T.value(x).shape[:-1])
        return T.stack([v * T.cos(th), v * T.sin(th), zero, zero], axis=-1)

    def g(self, x):
        return self._B

    def output_velocity(self, x):
        th, v = x[..., 2], x[..., 3]
        return [v * T.cos(th), v * T.sin(th)]

    def output_accel(self, x):
        th, v = x[..., 2], x[..., 3]
        c, s = T.cos(th), T.sin(th)
        zero = np.zeros(T.value(x).shape[:-1])
        # d/dt (v cos th, v sin th) = u1 * v * (-sin, cos) + u2 * (cos, sin)
        return [zero, zero], [[-(v * s), c], [v * c, s]]


MODELS: dict[str, type[SystemModel]] = {"double_integrator": DoubleIntegrator, "unicycle": Unicycle}


def make_model(name: str) -> SystemModel:
    try:
        return MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(MODELS)}") from None


def step(model: SystemModel, x, u, dt: float):
    return model.step(x, u, dt)


GammaFn = Callable[[float], tuple]


def barrier_derivatives(model: SystemModel, pred: Predicate, gamma, x, t: float = 0.0,
                        perturb: bool = True) -> BarrierDerivatives:
    """b = h + gamma and its first two time derivatives, split as drift + gain @ u.

    ``gamma`` is ``None`` or a callable returning ``(gamma, gamma_dot,
    gamma_ddot)`` at time ``t``.  With ``perturb=False`` an output sitting
    exactly on the center of a euclidean predicate raises SingularGradient.
    """
    if tuple(pred.output) != tuple(model.output):
        raise ValueError(f"predicate {pred.name} reads outputs {pred.output}, model exposes {model.output}")
    if not perturb and pred.gauge == "euclidean":
        d = pred.offsets(T.value(x), perturb=False)
        if np.any(sum(di ** 2 for di in d) < SINGULAR_OFFSET ** 2):
            raise SingularGradient(f"{pred.name}: output at the predicate center")
    s = pred.sign
    d = pred.offsets(x, perturb=True)
    grad = pred.sigma_grad(d)
    vel = model.output_velocity(x)
    acc_drift, acc_gain = model.output_accel(x)
    h = s * (pred.radius - pred.sigma(d))
    hdot = -s * sum(gi * vi for gi, vi in zip(grad, vel))
    curv = pred.sigma_hess_quad(d, vel)
    hddot_drift = -s * (curv + sum(gi * ai for gi, ai in zip(grad, acc_drift)))
    gain = [-s * sum(gi * row[k] for gi, row in zip(grad, acc_gain)) for k in range(model.q)]
    if gamma is not None:
        g0, g1, g2 = gamma(t)
        h, hdot, hddot_drift = h + g0, hdot + g1, hddot_drift + g2
    return BarrierDerivatives(h, hdot, hddot_drift, T.stack(gain, axis=-1))

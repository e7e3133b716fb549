"""Batched differentiable QP layer.

Each batch entry solves::

    minimize 0.5 u^T Q u + F^T u   subject to   G u <= h   (rows where mask is set)

The forward pass is an exact dual active-set solve; the backward pass
differentiates the KKT conditions on the active rows.  A compiled kernel is
used when it imports; ``STLBARRIER_PURE_PYTHON=1`` forces the NumPy version.
``STLBARRIER_NUM_THREADS`` splits large batches across threads (the compiled
solve releases the GIL).
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..nn import tape as T
from . import _kernels_py

log = logging.getLogger(__name__)

if os.environ.get("STLBARRIER_PURE_PYTHON") == "1":
    _kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _kernels = _kernels_py
        BACKEND = "python"

FALLBACK_DELTA = 1e-6
DROP_TOL = 1e-10


class QpStatus(IntEnum):
    OPTIMAL = 0
    INFEASIBLE = 1
    MAX_ITER = 2


class QpInfeasible(RuntimeError):
    """Raised in execution mode when a QP has no solution."""

    def __init__(self, message: str, rows: np.ndarray | None = None):
        super().__init__(message)
        self.rows = rows


def num_threads() -> int:
    try:
        return max(1, int(os.environ.get("STLBARRIER_NUM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class QpProblem:
    """Batched problem data; single problems are promoted to a batch of one."""

    Q: np.ndarray  # (B, q, q)
    F: np.ndarray  # (B, q)
    G: np.ndarray  # (B, r, q)
    h: np.ndarray  # (B, r)
    mask: np.ndarray | None = None  # (B, r) bool

    def __post_init__(self):
        F = np.asarray(self.F, dtype=np.float64)
        single = F.ndim == 1
        if single:
            F = F[None]
        B, q = F.shape
        Q = np.asarray(self.Q, dtype=np.float64)
        Q = np.broadcast_to(Q[None] if Q.ndim == 2 else Q, (B, q, q))
        G = np.asarray(self.G, dtype=np.float64)
        if G.ndim == 2:
            G = np.broadcast_to(G[None], (B,) + G.shape)
        r = G.shape[1]
        h = np.asarray(self.h, dtype=np.float64)
        h = np.broadcast_to(h.reshape(1, r) if h.ndim <= 1 else h, (B, r))
        mask = np.ones((B, r), dtype=np.uint8) if self.mask is None else \
            np.broadcast_to(np.asarray(self.mask, dtype=np.uint8).reshape((-1, r)), (B, r))
        # owned, writable C-contiguous copies (typed memoryviews reject read-only views)
        self.Q, self.F, self.G, self.h = (np.array(a, order="C") for a in (Q, F, G, h))
        self.mask = np.array(mask, dtype=np.uint8, order="C")
        self.single = single

    @property
    def batch(self) -> int:
        return self.F.shape[0]

    def validate(self) -> None:
        if not np.allclose(self.Q, np.swapaxes(self.Q, -1, -2), atol=1e-12):
            raise ValueError("Q must be symmetric")
        if self.batch and np.min(np.linalg.eigvalsh(self.Q)) < 1e-6:
            raise ValueError("Q must have eigenvalues >= 1e-6")
        for name in ("F", "G", "h"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")


@dataclass
class QpSolution:
    u: np.ndarray
    lam: np.ndarray
    status: np.ndarray
    active: np.ndarray
    stationarity: np.ndarray
    primal: np.ndarray
    complementarity: np.ndarray

    @property
    def all_optimal(self) -> bool:
        return bool(np.all(self.status == QpStatus.OPTIMAL))


@dataclass
class QpGrads:
    dQ: np.ndarray
    dF: np.ndarray
    dG: np.ndarray
    dh: np.ndarray
    dropped: int


def _residuals(p: QpProblem, u, lam):
    r = np.einsum("bij,bj->bi", p.Q, u) + p.F + np.einsum("bri,br->bi", p.G, lam)
    slack = np.einsum("bri,bi->br", p.G, u) - p.h
    m = p.mask.astype(bool)
    primal = np.where(m, np.maximum(slack, 0.0), 0.0).max(axis=1, initial=0.0)
    comp = np.abs(lam * slack).max(axis=1, initial=0.0)
    return np.linalg.norm(r, axis=1), primal, comp


def _chunks(B: int):
    n = min(num_threads(), B)
    if n <= 1 or B < 64:
        return None
    edges = np.linspace(0, B, n + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def solve(p: QpProblem, max_iter: int = 200) -> QpSolution:
    parts = _chunks(p.batch)
    args = (p.Q, p.F, p.G, p.h, p.mask)
    if parts is None:
        u, lam, status, act = _kernels.solve_batch(*args, max_iter)
    else:
        with ThreadPoolExecutor(len(parts)) as pool:
            outs = list(pool.map(lambda s: _kernels.solve_batch(
                *(np.ascontiguousarray(a[s]) for a in args), max_iter), parts))
        u, lam, status, act = (np.concatenate(col) for col in zip(*outs))
    stat, prim, comp = _residuals(p, u, lam)
    return QpSolution(u, lam, status, act, stat, prim, comp)


def backward(p: QpProblem, sol: QpSolution, upstream) -> QpGrads:
    """Adjoints of L(u*) given dL/du*; entries that are not optimal get zeros."""
    gu = np.ascontiguousarray(np.broadcast_to(np.asarray(upstream, dtype=np.float64), sol.u.shape))
    dQ, dF, dG, dh, dropped = _kernels.backward_batch(
        p.Q, p.G, sol.u, sol.lam, sol.active, sol.status, gu, DROP_TOL)
    if dropped:
        log.debug("dropped %d weakly active rows from the KKT system", dropped)
    return QpGrads(dQ, dF, dG, dh, int(dropped))


def fallback(p: QpProblem, u0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares violation minimizer used when a QP is infeasible."""
    return _kernels.fallback_batch(p.G, p.h, p.mask, np.ascontiguousarray(u0), FALLBACK_DELTA)


def qp_layer(Q, F, G, h, mask=None, mode: str = "train"):
    """Tape-level QP solve over a batch.

    Returns ``(u, solution)`` where ``u`` is on the tape of the inputs.  In
    ``"train"`` mode infeasible entries use the violation-minimizing input and
    differentiate through it; in ``"exec"`` mode they raise QpInfeasible.
    """
    if mode not in ("train", "exec"):
        raise ValueError(f"unknown QP mode {mode!r}")
    p = QpProblem(T.value(Q), T.value(F), T.value(G), T.value(h), mask)
    sol = solve(p)
    bad = sol.status != QpStatus.OPTIMAL
    u = sol.u.copy()
    vset = np.zeros_like(p.mask)
    if np.any(bad):
        if mode == "exec":
            b = int(np.flatnonzero(bad)[0])
            viol = np.flatnonzero(p.mask[b] & (p.G[b] @ sol.u[b] - p.h[b] > 1e-9))
            log.error("QP %s at batch entry %d; violated rows %s",
                      QpStatus(sol.status[b]).name.lower(), b, viol.tolist())
            raise QpInfeasible(f"QP infeasible at batch entry {b}", viol)
        idx = np.flatnonzero(bad)
        sub = QpProblem(p.Q[idx], p.F[idx], p.G[idx], p.h[idx], p.mask[idx])
        u_fb, vs = fallback(sub, u[idx])
        u[idx] = u_fb
        vset[idx] = vs
    if p.single:
        u_out = u[0]
    else:
        u_out = u

    def vjp(g):
        g = np.asarray(g).reshape(u.shape)
        grads = backward(p, sol, g)
        dG, dh = grads.dG, grads.dh
        if np.any(bad):
            idx = np.flatnonzero(bad)
            fG, fh = _kernels.fallback_backward(
                np.ascontiguousarray(p.G[idx]), np.ascontiguousarray(p.h[idx]),
                np.ascontiguousarray(u[idx]), np.ascontiguousarray(vset[idx]),
                np.ascontiguousarray(g[idx]), FALLBACK_DELTA)
            dG[idx], dh[idx] = fG, fh
        out = []
        for inp, d in ((Q, grads.dQ), (F, grads.dF), (G, dG), (h, dh)):
            out.append(_fit(d, T.value(inp).shape) if T.is_var(inp) else None)
        return out

    u_var = T.custom([Q, F, G, h], u_out, vjp, "qp")
    return u_var, sol


def _fit(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a batched adjoint to the shape of an input that was broadcast."""
    if g.shape == tuple(shape):
        return g
    g = g.reshape((-1,) + g.shape[1:]) if len(shape) < g.ndim else g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


__all__ = ["BACKEND", "QpGrads", "QpInfeasible", "QpProblem", "QpSolution", "QpStatus",
           "backward", "fallback", "num_threads", "qp_layer", "solve"]

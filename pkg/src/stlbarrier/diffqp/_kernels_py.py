"""Pure-Python batched QP kernels (reference implementation and fallback).

Problem per batch entry b::

    minimize 0.5 u^T Q u + F^T u   subject to   G[i] u <= h[i]  for rows with mask[i]

Solved with the Goldfarb-Idnani dual active-set method: start from the
unconstrained minimizer, add the most violated row, take primal/dual steps
and drop rows whose multiplier would turn negative.  An empty primal step with
no droppable row certifies infeasibility.

Status codes: 0 optimal, 1 infeasible, 2 iteration limit.
"""
from __future__ import annotations

import numpy as np

OPTIMAL, INFEASIBLE, MAX_ITER = 0, 1, 2


def _solve_one(Q, F, G, h, mask, max_iter, tol):
    q = Q.shape[0]
    r = G.shape[0]
    Qinv = np.linalg.inv(Q)
    u = -Qinv @ F
    active: list[int] = []
    lam: list[float] = []
    rows = [i for i in range(r) if mask[i]]
    it = 0
    while True:
        it += 1
        if it > max_iter:
            return u, active, lam, MAX_ITER
        p, worst = -1, -tol
        for i in rows:
            if i in active:
                continue
            s = h[i] - G[i] @ u
            if s < worst:
                worst, p = s, i
        if p < 0:
            return u, active, lam, OPTIMAL
        n = -G[p]
        lam_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                return u, active, lam, MAX_ITER
            Qn = Qinv @ n
            k = len(active)
            if k:
                N = -G[active].T  # q x k
                M = N.T @ Qinv @ N
                rr = np.linalg.solve(M, N.T @ Qn)
                z = Qn - Qinv @ N @ rr
            else:
                rr = np.zeros(0)
                z = Qn
            t1, kdrop = np.inf, -1
            for j in range(k):
                if rr[j] > tol and lam[j] / rr[j] < t1:
                    t1, kdrop = lam[j] / rr[j], j
            zn = z @ n
            if zn <= 1e-10 * (n @ Qn):
                if kdrop < 0:
                    return u, active, lam, INFEASIBLE
                lam = [lam[j] - t1 * rr[j] for j in range(k)]
                lam_p += t1
                del active[kdrop], lam[kdrop]
                continue
            t2 = (G[p] @ u - h[p]) / zn
            t = min(t1, t2)
            u = u + t * z
            lam = [lam[j] - t * rr[j] for j in range(k)]
            lam_p += t
            if t2 <= t1:
                active.append(p)
                lam.append(lam_p)
                break
            del active[kdrop], lam[kdrop]


def solve_batch(Q, F, G, h, mask, max_iter=200, tol=1e-12):
    B, q = F.shape
    r = G.shape[1]
    u = np.zeros((B, q))
    lam = np.zeros((B, r))
    status = np.zeros(B, dtype=np.int8)
    act = np.zeros((B, r), dtype=np.uint8)
    for b in range(B):
        ub, A, L, st = _solve_one(Q[b], F[b], G[b], h[b], mask[b], max_iter, tol)
        u[b] = ub
        status[b] = st
        for i, li in zip(A, L):
            lam[b, i] = max(li, 0.0)
            act[b, i] = 1
    return u, lam, status, act


def backward_batch(Q, G, u, lam, act, status, gu, drop_tol=1e-10):
    """Adjoints of the optimal u w.r.t. (Q, F, G, h) from the KKT system on the active rows."""
    B, q = u.shape
    r = G.shape[1]
    dQ = np.zeros((B, q, q))
    dF = np.zeros((B, q))
    dG = np.zeros((B, r, q))
    dh = np.zeros((B, r))
    dropped = 0
    for b in range(B):
        if status[b] != OPTIMAL:
            continue
        A = [i for i in range(r) if act[b, i] and lam[b, i] > drop_tol]
        dropped += int(act[b].sum()) - len(A)
        while True:
            k = len(A)
            K = np.zeros((q + k, q + k))
            K[:q, :q] = Q[b]
            if k:
                K[:q, q:] = G[b, A].T
                K[q:, :q] = G[b, A]
            rhs = np.concatenate([-gu[b], np.zeros(k)])
            try:
                w = np.linalg.solve(K, rhs)
                break
            except np.linalg.LinAlgError:
                # linearly dependent active rows: drop the weakest one
                j = min(range(k), key=lambda a: lam[b, A[a]])
                del A[j]
                dropped += 1
        wu, wl = w[:q], w[q:]
        dF[b] = wu
        dQ[b] = 0.5 * (np.outer(wu, u[b]) + np.outer(u[b], wu))
        for a, i in enumerate(A):
            dh[b, i] = -wl[a]
            dG[b, i] = lam[b, i] * wu + wl[a] * u[b]
    return dQ, dF, dG, dh, dropped


def _violation(G, h, mask, u, delta):
    s = np.where(mask, np.maximum(G @ u - h, 0.0), 0.0)
    return s @ s + delta * (u @ u), s


def fallback_batch(G, h, mask, u0, delta=1e-6, max_iter=50):
    """Minimize ||max(G u - h, 0)||^2 + delta ||u||^2.

    Damped semismooth Newton: the violated-set least-squares solve gives the
    direction, Armijo backtracking keeps the (convex) objective decreasing,
    which rules out the cycling of the plain fixed-point iteration.
    """
    B, r, q = G.shape
    u = u0.copy()
    vset = np.zeros((B, r), dtype=np.uint8)
    for b in range(B):
        Gb, hb, mb = G[b], h[b], mask[b].astype(bool)
        ub = u0[b].copy()
        f, s = _violation(Gb, hb, mb, ub, delta)
        for _ in range(max_iter):
            V = s > 0
            M = delta * np.eye(q) + Gb[V].T @ Gb[V]
            d = np.linalg.solve(M, Gb[V].T @ hb[V]) - ub
            slope = -2.0 * d @ (M @ d)  # grad . d at the current point
            if d @ d <= 1e-28 * (1.0 + ub @ ub):
                break
            t = 1.0
            while True:
                fn, sn = _violation(Gb, hb, mb, ub + t * d, delta)
                if fn <= f + 1e-4 * t * slope or t < 1e-10:
                    break
                t *= 0.5
            ub = ub + t * d
            done = t == 1.0 and np.array_equal(sn > 0, V)
            f, s = fn, sn
            if done:
                break
        u[b] = ub
        vset[b] = s > 0
    return u, vset


def fallback_backward(G, h, u, vset, gu, delta=1e-6):
    B, r, q = G.shape
    dG = np.zeros((B, r, q))
    dh = np.zeros((B, r))
    for b in range(B):
        V = [i for i in range(r) if vset[b, i]]
        M = delta * np.eye(q)
        for i in V:
            M += np.outer(G[b, i], G[b, i])
        w = np.linalg.solve(M, gu[b])
        for i in V:
            gw = G[b, i] @ w
            dh[b, i] = gw
            dG[b, i] = w * (h[b, i] - G[b, i] @ u[b]) - gw * u[b]
    return dG, dh

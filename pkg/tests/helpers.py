"""Shared generators and small oracles for the test suite."""
import itertools
import math

import numpy as np

from stlbarrier import stl

# criterion number -> (passed, detail); printed at the end of the session
ACCEPTANCE: dict = {}

# central-difference step balancing truncation against round-off
FD_STEP = float(np.cbrt(np.finfo(float).eps))


def conj_exp_oracle(values, beta=0.5):
    """Scalar three-case exponential conjunction, written out term by term."""
    values = [float(v) for v in values]
    rmin = min(values)
    if rmin < 0:
        eff = [rmin * math.exp((v - rmin) / rmin) for v in values]
    elif rmin > 0:
        eff = [rmin * (2 - math.exp(-(v - rmin) / rmin)) for v in values]
    else:
        return 0.0
    return beta * rmin + (1 - beta) * sum(eff) / len(eff)


def random_predicate(rng, name="p"):
    gauge = "superellipse" if rng.random() < 0.3 else "euclidean"
    return stl.Predicate(name=name, sign=int(rng.choice([-1, 1])), radius=float(rng.uniform(0.3, 2.0)),
                         center=tuple(rng.uniform(-2, 2, size=2)), gauge=gauge,
                         axes=tuple(rng.uniform(0.5, 1.5, size=2)))


def random_formula(rng, horizon=2.0, dt=0.1):
    """Random member of the fragment: conjunction of F/G over predicate-level formulas."""
    def leaf_level(depth):
        if depth == 0 or rng.random() < 0.5:
            return stl.Pred(random_predicate(rng, f"p{rng.integers(1000)}"))
        kids = tuple(leaf_level(depth - 1) for _ in range(int(rng.integers(2, 4))))
        return stl.And(kids) if rng.random() < 0.5 else stl.Or(kids)

    parts = []
    for _ in range(int(rng.integers(1, 4))):
        steps = int(round(horizon / dt))
        a = int(rng.integers(0, steps))
        b = int(rng.integers(a + 1, steps + 1))
        op = stl.F if rng.random() < 0.5 else stl.G
        parts.append(op(leaf_level(2), a * dt, b * dt))
    if rng.random() < 0.2:
        parts.append(leaf_level(1))
    return stl.conj(*parts)


def random_trajectory(rng, K=20, n=4):
    steps = rng.normal(scale=0.3, size=(K + 1, n))
    return np.cumsum(steps, axis=0) + rng.uniform(-2, 2, size=n)


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gamma_value(cat, w1, w2, t, c=0.05):
    """gamma written out from its definition, category codes 1/2/3."""
    if cat == 1:
        return 0.0
    if cat == 2:
        return w1 + w2 * t
    return w1 * math.exp(-w2 * t) - c


def omega_violations(slots, cats, h0, w1, w2, c=0.05):
    """Raw inequality check for one initial state; returns a list of failure strings.

    w1/w2 are per-slot floats (ignored for category I).  Pairs where both slots
    are category I carry no parameters and are not checked.
    """
    out = []

    def g(j, t):
        return gamma_value(int(cats[j]), w1[j], w2[j], t, c)

    for j, s in enumerate(slots):
        cat = int(cats[j])
        if cat == 1:
            continue
        if not g(j, 0.0) > -h0[j]:
            out.append(f"{s.name}: gamma(0) <= -h(x0)")
        if cat == 2:
            if not (w1[j] > 0 and w2[j] < 0):
                out.append(f"{s.name}: linear signs")
            if not g(j, s.tb) < 0:
                out.append(f"{s.name}: gamma(tb) >= 0")
            if math.isfinite(s.predicate.sup_h) and not g(j, s.ta) > -s.predicate.sup_h:
                out.append(f"{s.name}: gamma(ta) <= -sup h")
        else:
            if not (w1[j] > 0 and w2[j] > 0):
                out.append(f"{s.name}: exponential signs")
            if not g(j, s.ta) < 0:
                out.append(f"{s.name}: gamma(ta) >= 0")
    for j, sj in enumerate(slots):
        for k in range(j):
            sk = slots[k]
            pj, pk = sj.predicate, sk.predicate
            if pj.sign < 0 and pk.sign < 0:
                continue
            if int(cats[j]) == 1 and int(cats[k]) == 1:
                continue
            d = np.array([a - b for a, b in zip(pj.center, pk.center)])
            rhs = pj.sign * pk.sign * float(pj.sigma(list(d))) - pk.sign * pk.radius - pj.sign * pj.radius
            if g(j, sk.tb) + g(k, sk.tb) < rhs - 1e-9:
                out.append(f"{sj.name}/{sk.name}: cross condition at t={sk.tb}")
    return out


def short_config(ablation="feasibn-varp", name="double_integrator_I1"):
    """Ten-step variant of a bundled scenario: the first reach task and the safety tasks in [0, 1]."""
    import copy

    from stlbarrier.config import load_config, parse_config
    raw = copy.deepcopy(load_config(name).raw)
    raw["horizon"] = 1.0
    first = next(t for t in raw["tasks"] if t["op"] == "F")
    raw["tasks"] = [t for t in raw["tasks"] if t is first or t["op"] == "G"]
    for t in raw["tasks"]:
        t["interval"] = [0.0, 1.0] if t["op"] == "G" else [0.0, 0.9]
    raw["policy"]["ablation"] = ablation
    raw["train"].update(V=3, width=16, depth=3, lstm_hidden=4)
    return parse_config(raw)


def initnet_violations(slots, cats, X0, w1, w2, p1, p2, c=0.05):
    """Raw InitNet checks for states with zero initial velocity.

    With zero velocity bdot(x0, 0) is gamma_dot(0) alone, so the p_init
    condition ``bdot + p1 b > 0`` is checked without any model derivatives.
    Arrays are (V, M); w entries for category I slots are ignored.
    """
    bad = []
    V, M = len(X0), len(slots)
    h0 = np.stack([s.predicate.h(X0) for s in slots], axis=-1)
    for v in range(V):
        bad += [f"sample {v}: {m}" for m in omega_violations(slots, cats[v], h0[v], w1[v], w2[v], c)]
        for j in range(M):
            cat = int(cats[v][j])
            g0 = gamma_value(cat, w1[v][j], w2[v][j], 0.0, c)
            gdot = 0.0 if cat == 1 else (w2[v][j] if cat == 2 else -w2[v][j] * w1[v][j])
            b0 = h0[v, j] + g0
            if not (p1[v][j] > 0 and p2[v][j] > 0):
                bad.append(f"sample {v} slot {j}: non-positive multiplier")
            if b0 > 0 and not gdot + p1[v][j] * b0 > 0:
                bad.append(f"sample {v} slot {j}: psi1(x0, 0) <= 0")
    return bad


# ---------------------------------------------------------------------------
# QP oracles


def random_qp(rng, q=2, r=None, feasible=True):
    r = int(rng.integers(1, 7)) if r is None else r
    A = rng.normal(size=(q, q))
    Q = A @ A.T + 0.5 * np.eye(q)
    F = rng.normal(scale=3.0, size=q)
    G = rng.normal(size=(r, q))
    if feasible:
        h = G @ rng.normal(size=q) + rng.uniform(0.0, 2.0, size=r)
    else:
        h = rng.normal(size=r)
    return Q, F, G, h


def brute_force(Q, F, G, h, tol=1e-9):
    """Enumerate active sets; return the KKT point with feasible primal and nonnegative duals."""
    q, r = len(F), len(h)
    best = None
    for size in range(0, min(q, r) + 1):
        for S in itertools.combinations(range(r), size):
            S = list(S)
            K = np.block([[Q, G[S].T], [G[S], np.zeros((size, size))]])
            try:
                z = np.linalg.solve(K, np.concatenate([-F, h[S]]))
            except np.linalg.LinAlgError:
                continue
            u, lam = z[:q], z[q:]
            if np.all(G @ u <= h + tol) and np.all(lam >= -tol):
                val = 0.5 * u @ Q @ u + F @ u
                if best is None or val < best[0] - 1e-12:
                    best = (val, u)
    return None if best is None else best[1]


def one(Q, F, G, h):
    from stlbarrier import diffqp
    return diffqp.solve(diffqp.QpProblem(Q, F, G, h))


def finite_difference(Q, F, G, h, w, eps=1e-6):
    """dL/d(data) for L = w . u*(data) by central differences (Q perturbed symmetrically)."""
    def L(Q_, F_, G_, h_):
        return float(w @ one(Q_, F_, G_, h_).u[0])

    dF = np.array([(L(Q, F + e, G, h) - L(Q, F - e, G, h)) / (2 * eps) for e in eps * np.eye(len(F))])
    dh = np.array([(L(Q, F, G, h + e) - L(Q, F, G, h - e)) / (2 * eps) for e in eps * np.eye(len(h))])
    dG = np.zeros_like(G)
    for idx in np.ndindex(G.shape):
        E = np.zeros_like(G)
        E[idx] = eps
        dG[idx] = (L(Q, F, G + E, h) - L(Q, F, G - E, h)) / (2 * eps)
    dQs = np.zeros_like(Q)
    for i, j in itertools.combinations_with_replacement(range(len(F)), 2):
        E = np.zeros_like(Q)
        E[i, j] = E[j, i] = eps
        dQs[i, j] = dQs[j, i] = (L(Q + E, F, G, h) - L(Q - E, F, G, h)) / (2 * eps)
    return dQs, dF, dG, dh


def rel_ok(a, b, tol=1e-4, floor=1e-4):
    return np.all(np.abs(a - b) <= tol * np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))

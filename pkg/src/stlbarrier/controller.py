"""Closed-loop BarrierNet policy: networks, rollouts, objective and training.

One rollout batch shares a tape.  Samples are grouped by their category row
(the HOCBF structure depends on it) and each group is simulated as a batch;
the objective is the mean over all samples.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffqp, hocbf, stl
from .config import ScenarioConfig, sample_x0
from .hocbf import Category, EmptyOmegaBox, Slot
from .nn import AdamConfig, MlpSpec, ParamStore, Tape, adam_step, init_lstm, init_mlp, lstm_step, mlp_forward
from .nn import tape as T
from .systems import barrier_derivatives, make_model

log = logging.getLogger(__name__)

S_FLOOR = 1e-3  # s = softplus + S_FLOOR keeps multiplier ratios positive
MAX_RESAMPLE = 50
# initial biases of InitNet's raw outputs (w1 slack above its lower bound, multipliers)
W1_BIAS = 2.0
P_BIAS = 2.0
# F-type slots start with slowly shrinking gamma (w2 near its upper bound)
W2_BIAS = 2.0
# A rollout terminates when its state leaves this box or an input exceeds this
# multiple of the input bounds: the state is held and later inputs are zero.
DIVERGENCE_LIMIT = 1e3
INPUT_LIMIT_FACTOR = 10.0
# points per Euler segment checked by the deletion rule
SEGMENT_POINTS = 10


class Policy:
    """Static structure of the controller for one scenario."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.model = make_model(cfg.system)
        self.formula = cfg.formula()
        self.slots: list[Slot] = hocbf.build_slots(self.formula)
        self.M = len(self.slots)
        n, q, W, d = self.model.n, self.model.q, cfg.train.width, cfg.train.depth
        hidden = (W,) * (d - 1)
        self.n_q = q * (q + 1) // 2 if cfg.policy.q_mode == "trainable" else 0
        self.init_spec = MlpSpec((n,) + hidden + (4 * self.M,))
        self.mult_spec = MlpSpec((2,) + hidden + (2 * self.M,))
        if cfg.policy.memory:
            H = cfg.train.lstm_hidden
            self.ref_spec = MlpSpec((H, q + self.n_q))
        else:
            self.ref_spec = MlpSpec((n,) + hidden + (q + self.n_q,))
        # F-part of each slot's feasibility formula: the group must be reached in [ta, tb]
        self.fea_reach = {}
        for s in self.slots:
            if s.op == "F" and s.group not in self.fea_reach:
                members = [stl.Pred(o.predicate) for o in self.slots if o.group == s.group]
                self.fea_reach[s.group] = stl.F(stl.conj(*members), s.ta, s.tb)

    @property
    def policy(self):
        return self.cfg.policy


def init_params(pol: Policy, rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    baseline = pol.policy.ablation == "hocbf-baseline"
    init_mlp(store, "init", pol.init_spec, rng)
    last = f"init.b{pol.init_spec.n_layers - 1}"
    store.params[last][0:2 * pol.M:2] += W1_BIAS
    store.params[last][2 * pol.M:] += P_BIAS
    for j, s in enumerate(pol.slots):
        if s.op == "F":
            store.params[last][2 * j + 1] += W2_BIAS
    init_mlp(store, "mult", pol.mult_spec, rng)
    if pol.cfg.policy.memory:
        init_lstm(store, "ref.lstm", pol.model.n, pol.cfg.train.lstm_hidden, 2, rng, zero=baseline)
    init_mlp(store, "ref", pol.ref_spec, rng, zero=baseline)
    return store


# ---------------------------------------------------------------------------
# network heads


@dataclass
class InitOutputs:
    omegas: hocbf.Omegas
    p_init: list  # per slot (p1, p2), each (V,)
    p_lower: np.ndarray  # (V, M) value of the p1 lower bound


def _gamma_fn(cat, w1, w2, c):
    return lambda t: hocbf.gamma_eval(cat, w1, w2, t, c)


def initnet_forward(pol: Policy, params, X0, cats) -> InitOutputs:
    """Admissible (w1, w2) per slot and initial multipliers (p1, p2)."""
    X0 = np.asarray(X0, dtype=np.float64)
    raw = mlp_forward(params, "init", X0, pol.init_spec)
    M, eps_p, c = pol.M, pol.cfg.hocbf.eps_p, pol.cfg.hocbf.c
    h0 = hocbf.h_matrix(pol.slots, X0)
    om = hocbf.resolve_omegas(pol.slots, cats, h0, raw[:, :2 * M], pol.cfg.hocbf)
    p_init, lows = [], []
    for j, s in enumerate(pol.slots):
        d = barrier_derivatives(pol.model, s.predicate, _gamma_fn(cats[j], om.w1[j], om.w2[j], c), X0, 0.0)
        lower = T.maximum(-d.bdot / T.maximum(d.b, 1e-12), 0.0) + eps_p
        p1 = lower + T.softplus(raw[:, 2 * M + 2 * j])
        p2 = eps_p + T.softplus(raw[:, 2 * M + 2 * j + 1])
        p_init.append((p1, p2))
        lows.append(np.broadcast_to(T.value(lower), (X0.shape[0],)))
    return InitOutputs(om, p_init, np.stack(lows, axis=-1))


def _s(z):
    return T.softplus(z) + S_FLOOR


def multiplier_forward(pol: Policy, params, x, s0, p_init):
    """Per slot (p1, p2) at state x; ``s0`` is the net's value at x0."""
    if pol.policy.multiplier_mode == "fixed":
        return p_init
    s = _s(mlp_forward(params, "mult", x[..., 0:2], pol.mult_spec))
    ratio = s / s0
    return [(p1 * ratio[..., 2 * j], p2 * ratio[..., 2 * j + 1]) for j, (p1, p2) in enumerate(p_init)]


def multiplier_anchor(pol: Policy, params, X0):
    if pol.policy.multiplier_mode == "fixed":
        return None
    return _s(mlp_forward(params, "mult", np.asarray(X0)[..., 0:2], pol.mult_spec))


def refnet_forward(pol: Policy, params, x, state=None):
    """Returns (F, Q, new_state).  ``state`` carries the LSTM memory."""
    q = pol.model.q
    if pol.cfg.policy.memory:
        V, H = T.value(x).shape[0], pol.cfg.train.lstm_hidden
        if state is None:
            state = [(np.zeros((V, H)), np.zeros((V, H))) for _ in range(2)]
        inp, new = x, []
        for layer, (h, cc) in enumerate(state):
            h, cc, inp = lstm_step(params, f"ref.lstm.l{layer}", h, cc, inp)
            new.append((h, cc))
        out = mlp_forward(params, "ref", inp, pol.ref_spec)
    else:
        out, new = mlp_forward(params, "ref", x, pol.ref_spec), None
    F = out[..., 0:q]
    if pol.n_q == 0:
        return F, np.eye(q), new
    # Q = L L^T + 1e-6 I with L lower triangular, L = I at zero output
    r = out[..., q:q + pol.n_q]
    V = T.value(x).shape[0]
    rows = []
    k = 0
    Lcols = [[None] * q for _ in range(q)]
    for i in range(q):
        for jj in range(i + 1):
            Lcols[i][jj] = r[..., k] + (1.0 if i == jj else 0.0)
            k += 1
    zero = np.zeros(V)
    for i in range(q):
        rows.append(T.stack([Lcols[i][jj] if jj <= i else zero for jj in range(q)], axis=-1))
    L = T.stack(rows, axis=-2)
    Q = T.matmul(L, T.transpose(L)) + 1e-6 * np.eye(q)
    return F, Q, new


# ---------------------------------------------------------------------------
# rollout


@dataclass
class RolloutRecord:
    """Values of one batch of rollouts (leading axis: sample)."""

    dt: float
    x0: np.ndarray
    states: np.ndarray  # (V, K+1, n)
    inputs: np.ndarray  # (V, K, q)
    psi0: np.ndarray  # (V, K, M), nan where the slot is inactive
    psi1: np.ndarray
    active: np.ndarray  # (V, K, M) bool
    multipliers: np.ndarray  # (V, K, M, 2), nan where inactive
    status: np.ndarray  # (V, K) int8, -1 when no QP was solved
    p2_lifted: np.ndarray  # (V, K) bool, QP re-solved with raised p2 after an infeasible first try
    diverged: np.ndarray  # (V,) bool, state left the divergence box and was held
    t_del: np.ndarray  # (V, M)
    categories: np.ndarray  # (V, M)
    omega: np.ndarray  # (V, M, 2), nan for category I
    p_init: np.ndarray  # (V, M, 2)
    rho_task: np.ndarray  # exponential robustness of the task
    rho_task_classical: np.ndarray
    rho_bounds: np.ndarray
    rho_fea: np.ndarray  # (V, M), nan when the feasibility terms are off
    rho_uni: np.ndarray
    cost: np.ndarray
    slot_names: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.inputs.shape[1]

    @property
    def V(self) -> int:
        return self.states.shape[0]

    def infeasible_count(self) -> int:
        return int(np.sum((self.status != diffqp.QpStatus.OPTIMAL) & (self.status >= 0)))


@dataclass
class RolloutResult:
    record: RolloutRecord
    objective: object  # tape scalar
    per_sample: object  # (V,) tape values of rho_uni - cost


def _scatter(parts, idxs, V):
    first = parts[0]
    out = np.empty((V,) + first.shape[1:], dtype=first.dtype)
    for p, ix in zip(parts, idxs):
        out[ix] = p
    return out


def rollout(pol: Policy, params, X0, mode: str = "train") -> RolloutResult:
    """Simulate the closed loop from every row of X0 on the params' tape."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    V = X0.shape[0]
    if pol.M:
        cats = hocbf.categorize_batch(pol.slots, X0)
    else:  # pragma: no cover - formulas always have predicates
        cats = np.zeros((V, 0), dtype=np.int8)
    rows, inverse = np.unique(cats, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    recs, vals, idxs = [], [], []
    for g, row in enumerate(rows):
        ix = np.flatnonzero(inverse == g)
        try:
            rec, per = _rollout_group(pol, params, X0[ix], row, mode)
        except EmptyOmegaBox as e:
            raise EmptyOmegaBox(str(e), [int(ix[i]) for i in e.samples]) from None
        recs.append(rec)
        vals.append(per)
        idxs.append(ix)
    record = _merge(recs, idxs, V, pol)
    obj = T.sum(vals[0])
    for v in vals[1:]:
        obj = obj + T.sum(v)
    objective = obj / V
    if len(vals) == 1:
        per_sample = vals[0]
    else:
        order = np.argsort(np.concatenate(idxs))
        per_sample = T.concat(vals, axis=0)[order]
    return RolloutResult(record, objective, per_sample)


def _merge(recs, idxs, V, pol) -> RolloutRecord:
    kw = {}
    for name in RolloutRecord.__dataclass_fields__:
        if name in ("dt", "slot_names"):
            continue
        kw[name] = _scatter([getattr(r, name) for r in recs], idxs, V)
    return RolloutRecord(dt=recs[0].dt, slot_names=[s.name for s in pol.slots], **kw)


def _rollout_group(pol: Policy, params, X0, cats, mode):
    cfg, model, slots, M = pol.cfg, pol.model, pol.slots, pol.M
    V, n = X0.shape
    q, dt = model.q, cfg.dt
    K = cfg.K
    c = cfg.hocbf.c
    ablation = cfg.policy.ablation
    use_qp = cfg.policy.uses_qp
    tape = next(iter(params.values())).tape
    cats = [Category(int(k)) for k in cats]

    init = initnet_forward(pol, params, X0, cats)
    gammas = [_gamma_fn(cats[j], init.omegas.w1[j], init.omegas.w2[j], c) for j in range(M)]
    s0 = multiplier_anchor(pol, params, X0)
    tracker = hocbf.DeletionTracker(slots, V)
    u_lo, u_hi = np.asarray(cfg.u_min), np.asarray(cfg.u_max)
    bound_G = np.concatenate([np.eye(q), -np.eye(q)])
    bound_h = np.concatenate([u_hi, -u_lo])
    u_limit = INPUT_LIMIT_FACTOR * float(np.max(np.abs(np.concatenate([u_lo, u_hi]))))

    x = tape.leaf(X0, kind="x0")
    xs, us = [x], []
    psi1_vars = [[] for _ in range(M)]
    act_hist = np.zeros((V, K, M), dtype=bool)
    psi0_rec = np.full((V, K, M), np.nan)
    psi1_rec = np.full((V, K, M), np.nan)
    mult_rec = np.full((V, K, M, 2), np.nan)
    status = np.full((V, K), -1, dtype=np.int8)
    lifted = np.zeros((V, K), dtype=bool)
    mem = None
    zero = np.zeros(V)
    frozen = np.zeros(V, dtype=bool)
    frac = np.linspace(0.0, 1.0, SEGMENT_POINTS + 1)[1:]
    x_prev = None
    for k in range(K):
        t = k * dt
        xv = T.value(x)
        if x_prev is None:
            active = tracker.update(hocbf.h_matrix(slots, xv), t).copy()
        else:
            path = x_prev[:, None, :] + frac[None, :, None] * (xv - x_prev)[:, None, :]
            active = tracker.update(hocbf.h_matrix(slots, xv), t, hocbf.h_matrix(slots, path),
                                    t - dt + frac * dt).copy()
        x_prev = xv
        act_hist[:, k] = active
        F, Q, mem = refnet_forward(pol, params, x, mem)
        if not use_qp:
            u = -F if pol.n_q == 0 else -T.matmul(T.stack([F], axis=-2), _inv_sym2(Q))[..., 0, :]
        else:
            ps = multiplier_forward(pol, params, x, s0, init.p_init)
            G_rows, h_rows, mask_cols, lifts = [], [], [], []
            for j, s in enumerate(slots):
                if not active[:, j].any():
                    psi1_vars[j].append(zero)
                    continue
                d = barrier_derivatives(model, s.predicate, gammas[j], x, t)
                p1, p2 = ps[j]
                psi = hocbf.psi_values(d, p1, p2)
                psi1_vars[j].append(psi.psi1)
                a_j = active[:, j]
                psi0_rec[a_j, k, j] = np.broadcast_to(T.value(psi.psi0), (V,))[a_j]
                psi1_rec[a_j, k, j] = np.broadcast_to(T.value(psi.psi1), (V,))[a_j]
                mult_rec[a_j, k, j, 0] = np.broadcast_to(T.value(p1), (V,))[a_j]
                mult_rec[a_j, k, j, 1] = np.broadcast_to(T.value(p2), (V,))[a_j]
                # psi2 = a u + c >= 0  <=>  -a u <= c
                G_rows.append(-psi.a)
                h_rows.append(psi.c)
                mask_cols.append(a_j)
                lifts.append((j, d, p1, p2))
            n_hocbf = len(h_rows)
            if cfg.policy.qp_bounds:
                G_rows.extend(np.broadcast_to(bound_G[i], (V, q)) for i in range(2 * q))
                h_rows.extend(np.full(V, bound_h[i]) for i in range(2 * q))
                mask_cols.extend(np.ones(V, dtype=bool) for _ in range(2 * q))
            if G_rows:
                G = T.stack(G_rows, axis=-2)
                h = T.stack(h_rows, axis=-1)
                mask = np.stack(mask_cols, axis=-1)
                u, sol = diffqp.qp_layer(Q, F, G, h, mask, mode="train")
                bad = np.asarray(sol.status) == diffqp.QpStatus.INFEASIBLE
                if bad.any() and cfg.policy.p2_floor and n_hocbf:
                    # repair: raise p2 on the failed samples until every row with psi1 > 0 admits u = 0
                    for i, (j, d, p1, p2) in enumerate(lifts):
                        p2l = T.where(bad, hocbf.lift_p2(d, p1, p2, cfg.hocbf.eps_p), p2)
                        h_rows[i] = hocbf.psi_values(d, p1, p2l).c
                        m = bad & active[:, j]
                        mult_rec[m, k, j, 1] = np.broadcast_to(T.value(p2l), (V,))[m]
                    lifted[:, k] = bad
                    h = T.stack(h_rows, axis=-1)
                    u, sol = diffqp.qp_layer(Q, F, G, h, mask, mode="train")
                if mode != "train" and not sol.all_optimal:
                    bad = np.flatnonzero(np.asarray(sol.status) != diffqp.QpStatus.OPTIMAL)
                    raise diffqp.QpInfeasible(f"QP infeasible at step {k} for samples {bad.tolist()}", bad)
                status[:, k] = sol.status
            else:
                u = -F if pol.n_q == 0 else -T.matmul(T.stack([F], axis=-2), _inv_sym2(Q))[..., 0, :]
        if frozen.any():
            u = T.where(frozen[:, None], 0.0, u)
            status[frozen, k] = -1
        us.append(u)
        x_next = model.step(x, u, dt)
        xv, uv = T.value(x_next), T.value(u)
        blown = ~(np.all(np.isfinite(xv) & (np.abs(xv) < DIVERGENCE_LIMIT), axis=-1)
                  & np.all(np.isfinite(uv) & (np.abs(uv) <= u_limit), axis=-1))
        if np.any(blown & ~frozen):
            log.debug("step %d: %d rollouts diverged and are held", k, int(np.sum(blown & ~frozen)))
        frozen |= blown
        if frozen.any():
            x_next = T.where(frozen[:, None], x, x_next)
        x = x_next
        xs.append(x)
    # slots still pending at the horizon are resolved against the final segment
    xv = T.value(x)
    path = x_prev[:, None, :] + frac[None, :, None] * (xv - x_prev)[:, None, :]
    tracker.update(hocbf.h_matrix(slots, xv), K * dt, hocbf.h_matrix(slots, path), (K - 1) * dt + frac * dt)

    X = T.stack(xs, axis=1)
    U = T.stack(us, axis=1)
    beta = cfg.beta
    rho_task = stl.robustness_exp(pol.formula, X, beta=beta, dt=dt)
    slack = T.concat([U - u_lo, u_hi - U], axis=-1)
    rho_bounds = stl.conj_exp(stl.conj_exp(slack, beta), beta)
    terms = [rho_task, rho_bounds]
    rho_fea = np.full((V, M), np.nan)
    if cfg.policy.feasibility and use_qp:
        for j, s in enumerate(slots):
            margins = T.stack(psi1_vars[j], axis=-1)
            gpart = stl.conj_exp(margins, beta, mask=act_hist[:, :, j], empty=cfg.fea_cap)
            if s.op == "F":
                fpart = stl.robustness_exp(pol.fea_reach[s.group], X, beta=beta, dt=dt)
                fea = stl.conj_exp(T.stack([fpart, gpart], axis=-1), beta)
            else:
                fea = gpart
            terms.append(fea)
            rho_fea[:, j] = T.value(fea)
    rho_uni = stl.conj_exp(T.stack(terms, axis=-1), beta)
    cost = cfg.policy.cost_weight * T.sum(T.sum(U * U, axis=-1), axis=-1) * dt
    per = rho_uni - cost

    Xv, Uv = T.value(X), T.value(U)
    omega = np.full((V, M, 2), np.nan)
    pin = np.empty((V, M, 2))
    for j in range(M):
        if init.omegas.w1[j] is not None:
            omega[:, j, 0] = T.value(init.omegas.w1[j])
            omega[:, j, 1] = T.value(init.omegas.w2[j])
        pin[:, j, 0] = T.value(init.p_init[j][0])
        pin[:, j, 1] = T.value(init.p_init[j][1])
    rec = RolloutRecord(
        dt=dt, x0=X0.copy(), states=Xv, inputs=Uv, psi0=psi0_rec, psi1=psi1_rec, active=act_hist,
        multipliers=mult_rec, status=status, p2_lifted=lifted, diverged=frozen.copy(), t_del=tracker.t_del.copy(),
        categories=np.tile(np.asarray(cats, dtype=np.int8), (V, 1)), omega=omega, p_init=pin,
        rho_task=np.asarray(T.value(rho_task)),
        rho_task_classical=np.asarray(stl.robustness_classical(pol.formula, Xv, dt=dt)),
        rho_bounds=np.asarray(T.value(rho_bounds)), rho_fea=rho_fea,
        rho_uni=np.asarray(T.value(rho_uni)), cost=np.asarray(T.value(cost)),
        slot_names=[s.name for s in slots])
    return rec, per


def _inv_sym2(Q):
    """Inverse of a batch of 2x2 symmetric matrices on the tape."""
    a, b, d = Q[..., 0, 0], Q[..., 0, 1], Q[..., 1, 1]
    det = a * d - b * b
    return T.stack([T.stack([d / det, -b / det], axis=-1), T.stack([-b / det, a / det], axis=-1)], axis=-2)


def objective(records_per_sample, V: int | None = None):
    """Mean of per-sample (rho_uni - cost) values."""
    V = V or T.value(records_per_sample).shape[0]
    return T.sum(records_per_sample) / V


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    store: ParamStore
    curves: list[dict]
    resampled: int = 0
    skipped: int = 0


CURVE_COLUMNS = ("iteration", "mean_rho_uni", "mean_rho_classical", "mean_objective", "infeasible_qp")


def feasible_x0(pol: Policy, V: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample initial states where every G[0,.] slot holds at t=0."""
    need = [j for j, s in enumerate(pol.slots) if s.op in ("G", "bare") and s.ta == 0.0]
    out = np.empty((0, pol.model.n))
    for _ in range(MAX_RESAMPLE):
        X = sample_x0(pol.cfg, V, rng)
        if need:
            ok = np.all(hocbf.h_matrix(pol.slots, X)[:, need] >= 0, axis=1)
            X = X[ok]
        out = np.concatenate([out, X])[:V]
        if len(out) == V:
            return out
    raise hocbf.InfeasibleSpec("could not sample initial states satisfying the always-from-zero predicates")


def rollout_sampled(pol: Policy, params, V: int, rng: np.random.Generator, mode: str = "train"):
    """Sample V initial states and roll out, replacing draws with an empty omega box.

    Returns ``(result, n_resampled)``.
    """
    X0 = feasible_x0(pol, V, rng)
    resampled = 0
    for _ in range(MAX_RESAMPLE):
        try:
            return rollout(pol, params, X0, mode), resampled
        except EmptyOmegaBox as e:
            bad = sorted(set(e.samples)) or list(range(V))
            log.info("empty omega box for %d samples; resampling", len(bad))
            X0[bad] = feasible_x0(pol, len(bad), rng)
            resampled += len(bad)
    raise EmptyOmegaBox("repeated empty omega boxes while sampling initial states")


def train(cfg: ScenarioConfig, iters: int | None = None, seed: int | None = None,
          store: ParamStore | None = None, progress=None) -> TrainResult:
    """Adam ascent on the mean of rho_uni - cost over fresh initial states."""
    pol = Policy(cfg)
    iters = cfg.train.iters if iters is None else int(iters)
    seed = cfg.train.seed if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    if store is None:
        store = init_params(pol, rng)
    if cfg.policy.ablation == "hocbf-baseline":
        iters = 0
    adam = AdamConfig(lr=cfg.train.lr)
    curves: list[dict] = []
    resampled = skipped = 0
    for it in range(iters):
        tape = Tape()
        params = store.bind(tape)
        res, nres = rollout_sampled(pol, params, cfg.train.V, rng, "train")
        resampled += nres
        obj = res.objective
        rec = res.record
        row = {"iteration": it, "mean_rho_uni": float(np.mean(rec.rho_uni)),
               "mean_rho_classical": float(np.mean(rec.rho_task_classical)),
               "mean_objective": float(T.value(obj)), "infeasible_qp": rec.infeasible_count()}
        curves.append(row)
        if not math.isfinite(row["mean_objective"]):
            log.warning("iteration %d: non-finite objective; skipped", it)
            skipped += 1
            continue
        tape.backward(obj)
        grads = {k: -tape.grad(v) for k, v in params.items()}
        if not adam_step(store, grads, adam):
            skipped += 1
        if progress is not None:
            progress(row)
    return TrainResult(store, curves, resampled, skipped)


def evaluate(cfg: ScenarioConfig, store: ParamStore, n: int, seed: int, mode: str = "train") -> RolloutRecord | None:
    """Roll out ``n`` fresh samples with fixed parameters (no update)."""
    if n <= 0:
        return None
    pol = Policy(cfg)
    rng = np.random.default_rng(seed)
    params = store.bind(Tape())
    res, _ = rollout_sampled(pol, params, n, rng, mode)
    return res.record


def gradient(cfg: ScenarioConfig, store: ParamStore, X0):
    """Objective value and its gradient w.r.t. every parameter for fixed X0."""
    pol = Policy(cfg)
    tape = Tape()
    params = store.bind(tape)
    res = rollout(pol, params, X0, "train")
    tape.backward(res.objective)
    return float(T.value(res.objective)), {k: tape.grad(v) for k, v in params.items()}


def objective_value(cfg: ScenarioConfig, store: ParamStore, X0) -> float:
    pol = Policy(cfg)
    params = store.bind(Tape())
    return float(T.value(rollout(pol, params, X0, "train").objective))


__all__ = ["CURVE_COLUMNS", "InitOutputs", "Policy", "RolloutRecord", "RolloutResult", "TrainResult",
           "evaluate", "feasible_x0", "gradient", "init_params", "initnet_forward", "multiplier_anchor",
           "multiplier_forward", "objective", "objective_value", "refnet_forward", "rollout",
           "rollout_sampled", "train"]

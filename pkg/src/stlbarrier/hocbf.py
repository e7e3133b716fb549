"""Time-varying HOCBFs built from an STL formula.

Every predicate of the formula becomes a *slot*: its enclosing operator,
interval and the F-group it belongs to (members of one ``F(conj(...))`` are
deleted together).  Slots are ordered by interval end time.  For a given
initial state each slot gets a category:

* I   -- satisfied at t=0 under an operator starting at 0: ``b = h``
* II  -- under F otherwise: ``b = h + w1 + w2 t``
* III -- under G otherwise: ``b = h + w1 exp(-w2 t) - c``

The (w1, w2) of categories II/III come from raw network outputs squashed into
the admissible region: w1 first, then w2 given w1, slot by slot in end-time
order so cross constraints against earlier slots see concrete values.

Relative degree 2 with linear class-K functions throughout, so
``psi0 = b``, ``psi1 = bdot + p1 b`` and the QP row is
``a u + c >= 0`` with ``a`` the input gain and
``c = bddot_drift + (p1 + p2) bdot + p1 p2 b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import stl
from .nn import tape as T
from .stl import Predicate

EPS_OMEGA = 1e-3
EPS_P = 1e-3
DEFAULT_WIDTH = 5.0
_INF = math.inf


class Category(IntEnum):
    I = 1
    II = 2
    III = 3


class InfeasibleSpec(ValueError):
    """The formula cannot be satisfied from this initial state (e.g. G[0,.] violated at t=0)."""


class EmptyOmegaBox(ValueError):
    """No admissible (w1, w2) exists for some slot and initial state."""

    def __init__(self, message: str, samples=()):
        super().__init__(message)
        self.samples = list(samples)


@dataclass(frozen=True)
class Slot:
    index: int
    predicate: Predicate
    op: str  # "F", "G" or "bare"
    ta: float
    tb: float
    group: int

    @property
    def name(self) -> str:
        return self.predicate.name


@dataclass
class HocbfConfig:
    c: float = 0.05
    eps_omega: float = EPS_OMEGA
    eps_p: float = EPS_P
    default_width: float = DEFAULT_WIDTH


def build_slots(formula) -> list[Slot]:
    """Flatten a top-level conjunction into slots sorted by end time (stable)."""
    stl.validate_fragment(formula)
    tops = formula.children if isinstance(formula, stl.And) else (formula,)
    raw = []
    group = 0
    for top in tops:
        if isinstance(top, stl.TEMPORAL):
            op = "F" if isinstance(top, stl.Eventually) else "G"
            members = _conjuncts(top.child)
            for p in members:
                raw.append((p, op, top.ta, top.tb, group))
            group += 1
        else:
            for p in _conjuncts(top):
                raw.append((p, "bare", 0.0, 0.0, group))
                group += 1
    raw.sort(key=lambda r: r[3])
    return [Slot(i, *r) for i, r in enumerate(raw)]


def _conjuncts(f) -> list[Predicate]:
    if isinstance(f, stl.Pred):
        return [f.predicate]
    if isinstance(f, stl.And):
        return [p for c in f.children for p in _conjuncts(c)]
    raise stl.FragmentError("HOCBF construction needs conjunctions of predicates under each operator")


def h_matrix(slots: list[Slot], X) -> np.ndarray:
    """h of every slot at states X (..., n) -> (..., M)."""
    X = np.asarray(T.value(X), dtype=np.float64)
    return np.stack([s.predicate.h(X) for s in slots], axis=-1)


def categorize_batch(slots: list[Slot], X0) -> np.ndarray:
    """Category codes, shape (V, M)."""
    h0 = h_matrix(slots, np.atleast_2d(X0))
    cats = np.empty(h0.shape, dtype=np.int8)
    for j, s in enumerate(slots):
        ok = h0[:, j] >= 0
        if s.ta == 0.0:
            if s.op in ("G", "bare") and not ok.all():
                bad = np.flatnonzero(~ok).tolist()
                raise InfeasibleSpec(f"{s.name} must hold from t=0 but h(x0) < 0 for samples {bad}")
            cats[:, j] = np.where(ok, Category.I, Category.II if s.op == "F" else Category.III)
        else:
            cats[:, j] = Category.II if s.op == "F" else Category.III
    return cats


def categorize(formula, x0) -> list[tuple[Predicate, Category]]:
    slots = build_slots(formula)
    cats = categorize_batch(slots, np.asarray(x0, dtype=np.float64)[None])[0]
    return [(s.predicate, Category(int(c))) for s, c in zip(slots, cats)]


# ---------------------------------------------------------------------------
# gamma


def gamma_eval(category, w1, w2, t: float, c: float = 0.05):
    """(gamma, gamma_dot, gamma_ddot) at time t."""
    category = Category(int(category))
    if category == Category.I:
        return 0.0, 0.0, 0.0
    if category == Category.II:
        return w1 + w2 * t, w2, 0.0 * w2
    e = T.exp(-w2 * t)
    g = w1 * e
    return g - c, -w2 * g, w2 * w2 * g


def cross_rhs(later: Slot, earlier: Slot) -> float | None:
    """Right side of gamma_j(tau) + gamma_k(tau) >= rhs; None when the pair is released."""
    pj, pk = later.predicate, earlier.predicate
    if pj.sign < 0 and pk.sign < 0:
        return None
    d = [np.float64(a - b) for a, b in zip(pj.center, pk.center)]
    sig = float(pj.sigma(d))
    return pj.sign * pk.sign * sig - pk.sign * pk.radius - pj.sign * pj.radius


@dataclass
class OmegaBox:
    """Admissible interval of w1 and, given the chosen w1, of w2 (arrays over the batch)."""

    slot: str
    category: Category
    lo1: np.ndarray
    hi1: np.ndarray
    lo2: np.ndarray
    hi2: np.ndarray


@dataclass
class Omegas:
    w1: list
    w2: list
    boxes: list[OmegaBox] = field(default_factory=list)


def _vmax(items):
    out = items[0]
    for it in items[1:]:
        out = T.maximum(out, it)
    return out


def _vmin(items):
    out = items[0]
    for it in items[1:]:
        out = T.minimum(out, it)
    return out


def _vals(x, V):
    return np.broadcast_to(np.asarray(T.value(x), dtype=np.float64), (V,)).copy()


def resolve_omegas(slots: list[Slot], cats, h0, raw, cfg: HocbfConfig | None = None) -> Omegas:
    """Map raw outputs (V, 2M) to admissible (w1, w2) per slot.

    ``cats`` is one category row shared by the batch; ``h0`` is (V, M).
    Category I slots get ``None``.
    """
    cfg = cfg or HocbfConfig()
    eps, c, W = cfg.eps_omega, cfg.c, cfg.default_width
    h0 = np.asarray(h0, dtype=np.float64)
    V = h0.shape[0]
    cats = [Category(int(k)) for k in cats]
    w1s: list = [None] * len(slots)
    w2s: list = [None] * len(slots)
    boxes: list[OmegaBox] = []

    def gamma_at(k, tau):
        if cats[k] == Category.I:
            return 0.0
        return gamma_eval(cats[k], w1s[k], w2s[k], tau, c)[0]

    for j, sj in enumerate(slots):
        # lower bounds gamma_j(tau) >= L collected from the pairwise conditions
        lowers = []
        for k in range(len(slots)):
            if k == j:
                continue
            later, earlier = (sj, slots[k]) if k < j else (slots[k], sj)
            rhs = cross_rhs(later, earlier)
            if rhs is None:
                continue
            if k < j:
                if cats[j] == Category.I:
                    continue
                lowers.append((slots[k].tb, rhs - gamma_at(k, slots[k].tb)))
            elif cats[k] == Category.I and cats[j] != Category.I:
                # a later fixed barrier constrains this slot at its own end time
                lowers.append((sj.tb, rhs))
        if cats[j] == Category.I:
            continue
        raw1, raw2 = raw[..., 2 * j], raw[..., 2 * j + 1]
        if cats[j] == Category.II:
            w1, w2, box = _linear(sj, h0[:, j], lowers, raw1, raw2, eps, V)
        else:
            w1, w2, box = _exponential(sj, h0[:, j], lowers, raw1, raw2, eps, c, W, V)
        w1s[j], w2s[j] = w1, w2
        boxes.append(box)
    return Omegas(w1s, w2s, boxes)


def _linear(s: Slot, h0, lowers, raw1, raw2, eps, V):
    ta, tb = s.ta, s.tb
    R = s.predicate.sup_h
    lo1 = [np.maximum(-h0, 0.0) + eps]
    lo2 = []
    if ta > 0 and math.isfinite(R):
        lo1.append(np.full(V, (3 * eps - R / ta) * ta * tb / (tb - ta)))
    for tau, L in lowers:
        Lv = _vals(L, V)
        if tau <= 1e-12:
            lo1.append(L + eps)
        elif tau < tb - 1e-12:
            lo1.append((2 * eps * tau + L + eps) * tb / (tb - tau))
        elif np.any(Lv > -2 * eps * tb - eps):
            bad = np.flatnonzero(Lv > -2 * eps * tb - eps).tolist()
            raise EmptyOmegaBox(f"{s.name}: pairwise condition at t={tau} cannot hold for samples {bad}", bad)
    w1_lo = _vmax(lo1)
    w1 = w1_lo + T.softplus(raw1)
    hi2 = -w1 / tb - eps
    if ta > 0 and math.isfinite(R):
        lo2.append((-R - w1) / ta + eps)
    for tau, L in lowers:
        if tau > 1e-12:
            lo2.append((L + eps - w1) / tau)
    if lo2:
        w2_lo = _vmax(lo2)
        w2 = w2_lo + (hi2 - w2_lo) * T.sigmoid(raw2)
    else:
        w2_lo = np.full(V, -_INF)
        # oriented like the two-sided head: large raw2 -> gamma reaches zero late
        w2 = hi2 - T.softplus(-raw2)
    box = OmegaBox(s.name, Category.II, _vals(w1_lo, V), np.full(V, _INF), _vals(w2_lo, V), _vals(hi2, V))
    return w1, w2, box


def _exponential(s: Slot, h0, lowers, raw1, raw2, eps, c, W, V):
    ta = s.ta
    lo1 = [np.maximum(c - h0, 0.0) + eps]
    hi1 = []
    crosses = []
    for tau, L in lowers:
        Lc = L + eps + c
        if tau <= 1e-12:
            lo1.append(Lc)
            continue
        Lcv = _vals(Lc, V)
        active = Lcv > 0
        Lc_safe = T.where(active, Lc, 1.0)
        crosses.append((tau, active, Lc_safe))
        lo1.append(T.where(active, Lc_safe * math.exp(3 * eps * tau), 0.0))
        rhs = T.log(Lc_safe) / tau - math.log(c) / ta + 3 * eps
        coef = 1.0 / tau - 1.0 / ta
        if abs(coef) < 1e-12:
            bad = np.flatnonzero(active & (_vals(rhs, V) > 0)).tolist()
            if bad:
                raise EmptyOmegaBox(f"{s.name}: pairwise condition at t={tau} cannot hold for samples {bad}", bad)
        elif coef > 0:
            lo1.append(T.where(active, T.exp(rhs / coef), 0.0))
        else:
            hi1.append((active, T.exp(rhs / coef)))
    w1_lo = _vmax(lo1)
    if hi1:
        # inactive caps fall back to a finite default width
        w1_hi = _vmin([T.where(act, v, w1_lo + W) for act, v in hi1])
        gap = _vals(w1_hi, V) - _vals(w1_lo, V)
        if np.any(gap <= eps):
            bad = np.flatnonzero(gap <= eps).tolist()
            raise EmptyOmegaBox(f"{s.name}: w1 interval empty for samples {bad}", bad)
        w1 = w1_lo + (w1_hi - w1_lo) * T.sigmoid(raw1)
    else:
        w1_hi = np.full(V, _INF)
        w1 = w1_lo + T.softplus(raw1)
    w2_lo = T.maximum(T.log(w1 / c) / ta, 0.0) + eps
    if crosses:
        ups = [T.where(act, T.log(w1 / Lc) / tau - eps, w2_lo + W) for tau, act, Lc in crosses]
        w2_hi = _vmin(ups)
        w2 = w2_lo + (w2_hi - w2_lo) * T.sigmoid(raw2)
    else:
        w2_hi = np.full(V, _INF)
        w2 = w2_lo + T.softplus(raw2)
    box = OmegaBox(s.name, Category.III, _vals(w1_lo, V), _vals(w1_hi, V), _vals(w2_lo, V), _vals(w2_hi, V))
    return w1, w2, box


# ---------------------------------------------------------------------------
# multipliers and constraint rows


def p_init_lower(b0, bdot0, eps: float = EPS_P):
    """Lower bound for p1 making psi1(x0, 0) = bdot + p1 b positive."""
    b = np.maximum(np.asarray(T.value(b0), dtype=np.float64), 1e-12)
    return np.maximum(-np.asarray(T.value(bdot0)) / b, 0.0) + eps


@dataclass
class Psi:
    psi0: object
    psi1: object
    a: object  # (..., q) input gain of psi2
    c: object  # (...) drift part of psi2


def psi_values(derivs, p1, p2) -> Psi:
    b, bd = derivs.b, derivs.bdot
    psi1 = bd + p1 * b
    c = derivs.bddot_drift + (p1 + p2) * bd + p1 * p2 * b
    return Psi(b, psi1, derivs.input_gain, c)


def lift_p2(derivs, p1, p2, eps: float = EPS_P):
    """p2 raised to where ``p2 psi1`` dominates the drift part of psi2.

    Since ``c = bddot_drift + p1 bdot + p2 psi1``, any p2 above
    ``-(bddot_drift + p1 bdot) / psi1 + eps`` gives ``c > 0`` wherever
    ``psi1 > 0``, so u = 0 satisfies the row.  Rows with ``psi1 <= 0`` keep p2.
    """
    psi1 = derivs.bdot + p1 * derivs.b
    pos = np.asarray(T.value(psi1)) > 0
    if not pos.any():
        return p2
    safe = T.where(pos, psi1, 1.0)
    floor = -(derivs.bddot_drift + p1 * derivs.bdot) / safe + eps
    return T.where(pos, T.maximum(p2, floor), p2)


def feasibility_margin(derivs, p1):
    """psi_{m-1} = psi1 for relative degree two."""
    return derivs.bdot + p1 * derivs.b


# ---------------------------------------------------------------------------
# deletion


class DeletionTracker:
    """Per-rollout active set.  Deletion is permanent."""

    def __init__(self, slots: list[Slot], V: int):
        self.slots = slots
        self.deleted = np.zeros((V, len(slots)), dtype=bool)
        self.t_del = np.full((V, len(slots)), np.nan)
        self._groups: dict[int, list[int]] = {}
        for j, s in enumerate(slots):
            if s.op == "F":
                self._groups.setdefault(s.group, []).append(j)

    @property
    def active(self) -> np.ndarray:
        return ~self.deleted

    def update(self, h: np.ndarray, t: float, h_path: np.ndarray | None = None,
               t_path: np.ndarray | None = None) -> np.ndarray:
        """Apply the rules at sample time t given h of every slot, shape (V, M).

        ``h_path`` (V, S, M) with times ``t_path`` (S,) optionally gives h on
        the straight segment travelled since the previous sample, so a region
        crossed between samples still discharges its F-group.
        """
        if h_path is None:
            h_path, t_path = h[:, None, :], np.array([t])
        for members in self._groups.values():
            s = self.slots[members[0]]
            ok_t = t_path >= s.ta - 1e-9
            if not ok_t.any():
                continue
            hit = np.all(h_path[:, :, members] >= 0, axis=2) & ok_t[None, :]
            done = hit.any(axis=1)
            first = t_path[np.argmax(hit, axis=1)]
            for j in members:
                new = done & ~self.deleted[:, j]
                self.t_del[new, j] = first[new]
                self.deleted[:, j] |= done
        for j, s in enumerate(self.slots):
            if s.op != "F" and t > s.tb + 1e-9:
                new = ~self.deleted[:, j]
                self.t_del[new, j] = s.tb
                self.deleted[:, j] = True
        return self.active


def deletion_time(slot: Slot, h_samples, dt: float) -> float:
    """Deletion time implied by a sampled h trajectory (nan if it never happens)."""
    if slot.op != "F":
        return slot.tb
    for k, hv in enumerate(np.asarray(h_samples, dtype=np.float64)):
        t = k * dt
        if t >= slot.ta - 1e-9 and hv >= 0:
            return t
    return math.nan


def construction_report(slots: list[Slot], cats, omegas: Omegas | None = None, cfg: HocbfConfig | None = None) -> str:
    cfg = cfg or HocbfConfig()
    lines = ["slot  name            op    interval        sign  category  gamma"]
    kinds = {Category.I: "zero", Category.II: "linear", Category.III: f"exponential(c={cfg.c})"}
    for s, k in zip(slots, cats):
        k = Category(int(k))
        lines.append(f"{s.index:<5d} {s.name:<15s} {s.op:<5s} [{s.ta:g}, {s.tb:g}]"
                     f"{'':<{max(1, 10 - len(f'{s.ta:g}{s.tb:g}'))}} {s.predicate.sign:+d}    "
                     f"{k.name:<9s} {kinds[k]}")
    if omegas is not None:
        lines.append("")
        lines.append("omega boxes (sample 0): w1 in [lo1, hi1], w2 in [lo2, hi2] given w1")
        for b in omegas.boxes:
            lines.append(f"  {b.slot:<15s} w1 [{b.lo1[0]:.4g}, {b.hi1[0]:.4g}]  w2 [{b.lo2[0]:.4g}, {b.hi2[0]:.4g}]")
    return "\n".join(lines) + "\n"

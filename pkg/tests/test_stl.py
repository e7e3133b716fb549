import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlbarrier import stl
from stlbarrier.nn import Tape
from stlbarrier.nn import tape as T

from helpers import conj_exp_oracle, random_formula, random_trajectory


def disk(sign=1, R=1.0, o=(0.0, 0.0), name="p"):
    return stl.Predicate(name=name, sign=sign, radius=R, center=o)


def line_traj(hs):
    """States whose x coordinate makes h = R - |x| equal the given samples (R=1, o=0)."""
    X = np.zeros((len(hs), 4))
    X[:, 0] = 1.0 - np.asarray(hs)
    return X


class TestPredicate:
    def test_center_of_reach_region(self):
        assert stl.eval_predicate(disk(), np.zeros(4)) == pytest.approx(1.0)

    def test_avoid_outside(self):
        assert stl.eval_predicate(disk(sign=-1), np.array([2.0, 0, 0, 0])) == pytest.approx(1.0)

    def test_superellipse_quartic(self):
        p = stl.Predicate("obs", sign=-1, radius=1.0, center=(0.0, 0.0), gauge="superellipse", axes=(1.0, 1.0))
        # -(1 - 2^(1/4))
        assert stl.eval_predicate(p, np.array([1.0, 1.0, 0, 0])) == pytest.approx(0.18920711500272, abs=1e-12)

    def test_rejects_bad_radius(self):
        with pytest.raises(ValueError):
            disk(R=0.0)

    def test_negate_roundtrip(self):
        p = disk()
        assert p.negate().negate() == p


class TestHorizon:
    def test_single(self):
        assert stl.horizon(stl.F(stl.Pred(disk()), 0, 2)) == 2.0

    def test_task_I1(self):
        r1, r2 = stl.Pred(disk(name="r1")), stl.Pred(disk(name="r2"))
        o = stl.conj(stl.Not(stl.Pred(disk(name="o3"))), stl.Not(stl.Pred(disk(name="o4"))))
        phi = stl.conj(stl.F(r1, 0, 2), stl.F(r2, 2, 5), stl.G(o, 0, 5))
        assert stl.horizon(phi) == 5.0

    def test_task_I2(self):
        phi = stl.conj(stl.F(stl.Pred(disk()), 0, 5), stl.G(stl.Pred(disk(-1)), 0, 10))
        assert stl.horizon(phi) == 10.0

    def test_bare_predicate(self):
        assert stl.horizon(stl.Pred(disk())) == 0.0


class TestFragment:
    def test_nested_temporal_rejected(self):
        with pytest.raises(stl.FragmentError):
            stl.validate_fragment(stl.F(stl.G(stl.Pred(disk()), 0, 1), 0, 1))

    def test_disjunction_of_temporal_rejected(self):
        a = stl.F(stl.Pred(disk()), 0, 1)
        with pytest.raises(stl.FragmentError):
            stl.validate_fragment(stl.Or((a, a)))

    def test_bad_interval(self):
        with pytest.raises(stl.FragmentError):
            stl.F(stl.Pred(disk()), 2, 1)

    def test_dict_roundtrip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            f = random_formula(rng)
            assert stl.from_dict(stl.to_dict(f)) == f


class TestClassical:
    def test_always_min(self):
        f = stl.G(stl.Pred(disk()), 0, 0.2)
        assert stl.robustness_classical(f, line_traj([0.5, 0.3, 0.2]), dt=0.1) == pytest.approx(0.2)

    def test_eventually_max(self):
        f = stl.F(stl.Pred(disk()), 0, 0.2)
        assert stl.robustness_classical(f, line_traj([-1, -0.5, 0.4]), dt=0.1) == pytest.approx(0.4)

    def test_negation(self):
        f = stl.Not(stl.Pred(disk()))
        assert stl.robustness_classical(f, line_traj([0.7]), dt=0.1) == pytest.approx(-0.7)

    def test_too_short(self):
        with pytest.raises(stl.TrajectoryTooShort):
            stl.robustness_classical(stl.F(stl.Pred(disk()), 0, 1), line_traj([0.1, 0.2]), dt=0.1)

    def test_interval_indices(self):
        assert stl.interval_indices(0.3, 0.7, 0.1) == (3, 7)
        assert stl.interval_indices(0.25, 0.75, 0.1) == (3, 7)


class TestConjExp:
    def test_positive_example(self):
        # 0.5*1 + 0.5*(1 + 2 - e^-1)/2
        assert float(stl.conj_exp(np.array([1.0, 2.0]), 0.5)) == pytest.approx(1.1580301397, abs=1e-9)

    def test_negative_example(self):
        # 0.5*(-1) + 0.5*(-1 - e^-3)/2
        assert float(stl.conj_exp(np.array([-1.0, 2.0]), 0.5)) == pytest.approx(-0.7624468, abs=1e-7)

    @pytest.mark.parametrize("beta", [0.0, 0.3, 1.0])
    def test_zero_min(self, beta):
        assert float(stl.conj_exp(np.array([0.0, 5.0]), beta)) == 0.0

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            stl.conj_exp(np.zeros(0))

    def test_mask_excludes_entries(self):
        v = np.array([[-5.0, 1.0, 2.0]])
        m = np.array([[False, True, True]])
        assert float(stl.conj_exp(v, 0.5, mask=m)[0]) == pytest.approx(conj_exp_oracle([1.0, 2.0]))

    def test_empty_mask_row(self):
        out = stl.conj_exp(np.array([[1.0, 2.0]]), 0.5, mask=np.zeros((1, 2), bool), empty=0.7)
        assert float(out[0]) == 0.7

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=8), st.floats(0, 1))
    def test_matches_oracle(self, vals, beta):
        got = float(stl.conj_exp(np.array(vals), beta))
        assert got == pytest.approx(conj_exp_oracle(vals, beta), rel=1e-9, abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(-20, 20, allow_nan=False), min_size=1, max_size=8), st.floats(0, 1))
    def test_sign_of_min(self, vals, beta):
        got = float(stl.conj_exp(np.array(vals), beta))
        assert np.sign(got) == np.sign(min(vals))

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3), st.integers(0, 2),
           st.floats(0, 1))
    def test_monotone(self, vals, i, beta):
        v = np.array(vals)
        w = v.copy()
        w[i] += 1e-3
        assert float(stl.conj_exp(w, beta)) >= float(stl.conj_exp(v, beta)) - 1e-12


class TestExponential:
    def test_predicate_exact(self):
        X = random_trajectory(np.random.default_rng(0), K=3)
        p = disk(o=(0.3, -0.2))
        assert float(stl.robustness_exp(stl.Pred(p), X, dt=0.1)) == pytest.approx(float(p.h(X[0])))

    def test_beta_one_always(self):
        f = stl.G(stl.Pred(disk()), 0, 0.2)
        assert float(stl.robustness_exp(f, line_traj([0.5, 0.3, 0.2]), beta=1.0, dt=0.1)) == pytest.approx(0.2)

    def test_beta_one_eventually(self):
        f = stl.F(stl.Pred(disk()), 0, 0.2)
        assert float(stl.robustness_exp(f, line_traj([-1, -0.5, 0.4]), beta=1.0, dt=0.1)) == pytest.approx(0.4)

    def test_beta_one_equals_classical_on_conjunctions(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            preds = [stl.Pred(disk(int(rng.choice([-1, 1])), rng.uniform(0.5, 2), tuple(rng.uniform(-1, 1, 2))))
                     for _ in range(3)]
            f = stl.conj(stl.G(stl.conj(*preds[:2]), 0, 1), stl.G(preds[2], 0.5, 2))
            X = random_trajectory(rng)
            assert abs(float(stl.robustness_exp(f, X, beta=1.0, dt=0.1))
                       - float(stl.robustness_classical(f, X, dt=0.1))) < 1e-12

    def test_batched_matches_single(self):
        rng = np.random.default_rng(5)
        f = random_formula(rng)
        Xs = np.stack([random_trajectory(rng) for _ in range(4)])
        batch = stl.robustness_exp(f, Xs, dt=0.1)
        for i in range(4):
            assert float(batch[i]) == pytest.approx(float(stl.robustness_exp(f, Xs[i], dt=0.1)), rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        checked = 0
        for _ in range(10):
            f = random_formula(rng)
            X = random_trajectory(rng)
            tape = Tape()
            xv = tape.leaf(X)
            out = stl.robustness_exp(f, xv, dt=0.1)
            tape.backward(out)
            g = tape.grad(xv)
            for idx in zip(rng.integers(0, X.shape[0], 5), rng.integers(0, 2, 5)):
                e = np.zeros_like(X)
                e[idx] = 1e-6
                fd = (float(stl.robustness_exp(f, X + e, dt=0.1)) - float(stl.robustness_exp(f, X - e, dt=0.1))) / 2e-6
                if abs(fd) < 1e-8 and abs(g[idx]) < 1e-8:
                    continue
                assert abs(fd - g[idx]) <= 1e-4 * max(abs(fd), abs(g[idx]), 1e-3)
                checked += 1
        assert checked > 10


def test_soundness_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(300):
        f = random_formula(rng)
        X = random_trajectory(rng)
        c = float(stl.robustness_classical(f, X, dt=0.1))
        e = float(stl.robustness_exp(f, X, dt=0.1))
        if abs(c) > 1e-9:
            assert math.copysign(1, c) == math.copysign(1, e)

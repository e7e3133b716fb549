import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stlbarrier.nn import (AdamConfig, MlpSpec, ParamStore, ShapeMismatch, Tape, adam_step, bounded_head,
                           init_lstm, init_mlp, load_checkpoint, lstm_step, mlp_forward, save_checkpoint)
from stlbarrier.nn import tape as T


def check_grad(fn, *arrays, eps=1e-6, tol=1e-6):
    """Compare tape gradients of scalar fn(*vars) with central differences."""
    tape = Tape()
    vs = [tape.leaf(a) for a in arrays]
    tape.backward(fn(*vs))
    for i, a in enumerate(arrays):
        g = tape.grad(vs[i])
        fd = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            e = np.zeros_like(a)
            e[idx] = eps
            args_p = [x + e if j == i else x for j, x in enumerate(arrays)]
            args_m = [x - e if j == i else x for j, x in enumerate(arrays)]
            fd[idx] = (float(T.value(fn(*args_p))) - float(T.value(fn(*args_m)))) / (2 * eps)
        np.testing.assert_allclose(g, fd, rtol=tol, atol=tol)


RNG = np.random.default_rng(0)
A = RNG.normal(size=(3, 4))
B = RNG.normal(size=(4, 2))
P = RNG.uniform(0.5, 2.0, size=(3, 4))


class TestTapeGradients:
    @pytest.mark.parametrize("op", ["exp", "tanh", "sigmoid", "softplus", "sin", "cos", "square"])
    def test_elementwise(self, op):
        check_grad(lambda x: T.sum(getattr(T, op)(x) * A), A)

    @pytest.mark.parametrize("op", ["log", "sqrt"])
    def test_positive_domain(self, op):
        check_grad(lambda x: T.sum(getattr(T, op)(x)), P)

    def test_arithmetic_and_broadcast(self):
        row = RNG.normal(size=4)
        check_grad(lambda x, r: T.sum((x * r - r / (x * x + 1.0)) ** 2), A, row)

    def test_matmul(self):
        check_grad(lambda x, y: T.sum(T.tanh(T.matmul(x, y))), A, B)

    def test_reductions(self):
        check_grad(lambda x: T.sum(T.mean(x, axis=0) * T.amin(x, axis=1)[0] + T.amax(x, axis=-1)[1]), A)

    def test_where_stack_concat(self):
        mask = A > 0
        check_grad(lambda x: T.sum(T.where(mask, x * 2.0, T.exp(x))
                                   * T.concat([T.stack([x[0], x[1]], axis=0), x[2:3]], axis=0)), A)

    def test_maximum_minimum(self):
        other = A + RNG.choice([-1.0, 1.0], size=A.shape) * 0.3
        check_grad(lambda x: T.sum(T.maximum(x, other) - 2.0 * T.minimum(x, 0.1)), A)

    def test_indexing_and_reshape(self):
        check_grad(lambda x: T.sum(x[1:, ::2].reshape(-1) ** 3), A)

    def test_reused_node_accumulates(self):
        tape = Tape()
        x = tape.leaf(np.array(3.0))
        y = x * x + x
        tape.backward(y)
        assert float(tape.grad(x)) == pytest.approx(7.0)

    def test_unused_leaf_has_zero_grad(self):
        tape = Tape()
        x, z = tape.leaf(np.ones(2)), tape.leaf(np.ones(3))
        tape.backward(T.sum(x))
        np.testing.assert_array_equal(tape.grad(z), np.zeros(3))

    def test_cross_tape_rejected(self):
        t1, t2 = Tape(), Tape()
        x = t1.leaf(np.ones(2))
        with pytest.raises(ValueError):
            t2.backward(T.sum(x))

    def test_grad_before_backward(self):
        tape = Tape()
        x = tape.leaf(1.0)
        with pytest.raises(RuntimeError):
            tape.grad(x)

    def test_plain_arrays_pass_through(self):
        np.testing.assert_allclose(T.exp(np.zeros(2)), np.ones(2))
        assert not T.is_var(T.softplus(np.zeros(1)))


class TestMlp:
    def test_zero_weights(self):
        store = ParamStore()
        spec = MlpSpec((3, 5, 2))
        init_mlp(store, "m", spec, np.random.default_rng(0), zero=True)
        np.testing.assert_array_equal(mlp_forward(store.params, "m", np.ones((4, 3)), spec), np.zeros((4, 2)))

    def test_identity_passthrough(self):
        spec = MlpSpec((3, 3))
        params = {"m.W0": np.eye(3), "m.b0": np.zeros(3)}
        x = RNG.normal(size=(5, 3))
        np.testing.assert_allclose(mlp_forward(params, "m", x, spec), x)

    def test_shape_mismatch(self):
        store = ParamStore()
        spec = MlpSpec((3, 2))
        init_mlp(store, "m", spec, np.random.default_rng(0))
        with pytest.raises(ShapeMismatch):
            mlp_forward(store.params, "m", np.ones((1, 4)), spec)

    def test_parameter_gradients(self):
        store = ParamStore()
        spec = MlpSpec((2, 4, 1), hidden="tanh")
        init_mlp(store, "m", spec, np.random.default_rng(1))
        names = store.names()
        x = RNG.normal(size=(6, 2))
        check_grad(lambda *ps: T.sum(mlp_forward(dict(zip(names, ps)), "m", x, spec) ** 2),
                   *(store.params[k] for k in names))

    def test_duplicate_parameter(self):
        store = ParamStore()
        store.add("a", np.zeros(1))
        with pytest.raises(KeyError):
            store.add("a", np.zeros(1))


class TestBoundedHead:
    def test_two_sided_midpoint(self):
        assert float(bounded_head(np.array(0.0), 0.0, 2.0)) == pytest.approx(1.0)

    def test_one_sided_lower(self):
        assert float(bounded_head(np.array(0.0), lo=3.0)) == pytest.approx(3.0 + math.log(2.0))
        assert float(bounded_head(np.array(0.0), lo=3.0)) == pytest.approx(3.6931, abs=1e-4)

    def test_lower_limit(self):
        assert float(bounded_head(np.array(-800.0), lo=3.0)) >= 3.0

    def test_unbounded_passthrough(self):
        assert float(bounded_head(np.array(1.7))) == 1.7

    def test_rejects_empty_interval(self):
        with pytest.raises(ValueError):
            bounded_head(np.zeros(2), np.array([1.0, 0.0]), np.array([2.0, 0.0]))

    @settings(max_examples=500, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(-100, 100), st.floats(1e-3, 100))
    def test_range(self, raw, lo, width):
        two = float(bounded_head(np.array(raw), lo, lo + width))
        assert lo <= two <= lo + width
        assert float(bounded_head(np.array(raw), lo=lo)) >= lo
        assert float(bounded_head(np.array(raw), hi=lo)) <= lo


class TestLstm:
    def test_zero_params(self):
        store = ParamStore()
        init_lstm(store, "l", 3, 5, 1, np.random.default_rng(0), zero=True)
        params = {k[len("l.l0."):]: v for k, v in store.params.items()}
        params = {f"p.{k}": v for k, v in params.items()}
        h, c, out = lstm_step(params, "p", np.zeros((2, 5)), np.zeros((2, 5)), np.ones((2, 3)))
        np.testing.assert_array_equal(h, np.zeros((2, 5)))

    def test_matches_hand_cell(self):
        rng = np.random.default_rng(2)
        n_in, H = 3, 2
        Wx, Wh, b = rng.normal(size=(n_in, 4 * H)), rng.normal(size=(H, 4 * H)), rng.normal(size=4 * H)
        x, h0, c0 = rng.normal(size=n_in), rng.normal(size=H), rng.normal(size=H)
        sig = lambda z: 1 / (1 + np.exp(-z))
        z = x @ Wx + h0 @ Wh + b
        i, f, g, o = sig(z[:H]), sig(z[H:2 * H]), np.tanh(z[2 * H:3 * H]), sig(z[3 * H:])
        c_ref = f * c0 + i * g
        h, c, _ = lstm_step({"p.Wx": Wx, "p.Wh": Wh, "p.b": b}, "p", h0, c0, x)
        np.testing.assert_allclose(c, c_ref)
        np.testing.assert_allclose(h, o * np.tanh(c_ref))

    def test_shape_mismatch(self):
        params = {"p.Wx": np.zeros((3, 8)), "p.Wh": np.zeros((2, 8)), "p.b": np.zeros(8)}
        with pytest.raises(ShapeMismatch):
            lstm_step(params, "p", np.zeros(2), np.zeros(2), np.zeros(4))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        Wx, Wh, b = rng.normal(size=(2, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
        xs = rng.normal(size=(3, 2))

        def run(wx, wh, bb):
            p = {"p.Wx": wx, "p.Wh": wh, "p.b": bb}
            h = c = np.zeros(2)
            for x in xs:
                h, c, _ = lstm_step(p, "p", h, c, x)
            return T.sum(h * np.array([1.0, -0.5]))

        check_grad(run, Wx, Wh, b)


class TestAdam:
    def store(self):
        s = ParamStore()
        s.add("w", np.array([1.0, -2.0]))
        return s

    def test_zero_grad(self):
        s = self.store()
        assert adam_step(s, {"w": np.zeros(2)}, AdamConfig())
        np.testing.assert_array_equal(s.params["w"], [1.0, -2.0])

    def test_moments_decay(self):
        s = self.store()
        adam_step(s, {"w": np.array([1.0, -3.0])}, AdamConfig())
        m, v = s.m["w"].copy(), s.v["w"].copy()
        adam_step(s, {"w": np.zeros(2)}, AdamConfig())
        np.testing.assert_allclose(s.m["w"], 0.9 * m)
        np.testing.assert_allclose(s.v["w"], 0.999 * v)

    def test_constant_gradient_step_size(self):
        s = self.store()
        cfg = AdamConfig(lr=1e-2)
        prev = s.params["w"].copy()
        for _ in range(200):
            adam_step(s, {"w": np.array([0.3, -7.0])}, cfg)
            step = s.params["w"] - prev
            prev = s.params["w"].copy()
        np.testing.assert_allclose(np.abs(step), [cfg.lr, cfg.lr], rtol=1e-5)

    def test_matches_reference_formula(self):
        s = self.store()
        cfg = AdamConfig(lr=0.1)
        gs = [np.array([1.0, 2.0]), np.array([-0.5, 0.1]), np.array([3.0, 0.0])]
        w, m, v = np.array([1.0, -2.0]), np.zeros(2), np.zeros(2)
        for t, g in enumerate(gs, start=1):
            adam_step(s, {"w": g}, cfg)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(s.params["w"], w)

    def test_nan_gradient_skipped(self):
        s = self.store()
        assert not adam_step(s, {"w": np.array([np.nan, 0.0])}, AdamConfig())
        np.testing.assert_array_equal(s.params["w"], [1.0, -2.0])
        assert s.step == 0

    def test_deterministic(self):
        a, b = self.store(), self.store()
        for g in (np.array([0.1, 0.2]), np.array([-1.0, 3.0])):
            adam_step(a, {"w": g}, AdamConfig())
            adam_step(b, {"w": g}, AdamConfig())
        np.testing.assert_array_equal(a.params["w"], b.params["w"])


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        s = ParamStore()
        init_mlp(s, "m", MlpSpec((3, 4, 2)), np.random.default_rng(0))
        adam_step(s, {k: np.ones_like(v) for k, v in s.params.items()}, AdamConfig())
        path = tmp_path / "ck.npz"
        save_checkpoint(path, s, "abc123", {"note": 1})
        s2, meta = load_checkpoint(path)
        assert meta["config_hash"] == "abc123" and meta["extra"] == {"note": 1}
        assert s2.step == s.step and s2.names() == s.names()
        np.testing.assert_array_equal(s2.flat(), s.flat())
        for k in s.names():
            np.testing.assert_array_equal(s2.m[k], s.m[k])
            np.testing.assert_array_equal(s2.v[k], s.v[k])

    def test_copy_is_independent(self):
        s = ParamStore()
        s.add("a", np.zeros(2))
        c = s.copy()
        c.params["a"][0] = 5.0
        assert s.params["a"][0] == 0.0

"""Tests for the tensor/gradient/optimizer substrate.

Expected values below were derived by hand (chain rule, closed-form Adam
step) before the implementation was written, so they are independent of
the code under test.
"""

import numpy as np
import pytest

from aircast.errors import DimensionError, ValidationError
from aircast.numerics import (AdamState, ParamSet, Tensor, adam_step,
                              clip_grads_, concat, finite_difference_check,
                              global_grad_norm, grad, matmul, stack)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(Tensor(np.eye(2)), a)
        assert np.array_equal(out.data, a.data)

    def test_inner_product(self):
        # [1 2] . [3 4]^T = 3 + 8 = 11
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == 11.0

    def test_zeros_annihilate(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        out = matmul(a, Tensor(np.zeros((3, 4))))
        assert np.all(out.data == 0.0)

    def test_associativity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.standard_normal((4, 4))
            b = rng.standard_normal((4, 4))
            c = rng.standard_normal((4, 4))
            left = matmul(matmul(Tensor(a), Tensor(b)), Tensor(c)).data
            right = matmul(Tensor(a), matmul(Tensor(b), Tensor(c))).data
            assert np.allclose(left, right, atol=1e-10)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        with pytest.raises(DimensionError):
            matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


class TestForwardValues:
    def test_sigmoid_and_silu(self):
        x = Tensor([0.0, 1.0])
        s = x.sigmoid().data
        assert s[0] == 0.5
        # 1/(1+e^-1) = 0.7310585786300049
        assert abs(s[1] - 0.7310585786300049) < 1e-15
        assert abs(x.silu().data[1] - 0.7310585786300049) < 1e-15

    def test_sigmoid_extreme_inputs_stay_finite(self):
        s = Tensor([800.0, -800.0]).sigmoid().data
        assert np.all(np.isfinite(s))
        assert s[0] == 1.0 and s[1] >= 0.0

    def test_reductions(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        assert a.sum().item() == 15.0
        assert np.array_equal(a.mean(axis=0).data, np.array([1.5, 2.5, 3.5]))
        assert a.mean(axis=1, keepdims=True).shape == (2, 1)

    def test_dtype_is_float64(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert (t * 2).data.dtype == np.float64


class TestGradBasics:
    def test_quadratic(self):
        # f(w) = sum(w^2), df/dw = 2w -> [2, -4] at w = [1, -2]
        params = ParamSet()
        params.add("w", [1.0, -2.0])
        g = grad(lambda p: p["w"].square().sum(), params)
        assert np.array_equal(g["w"], np.array([2.0, -4.0]))

    def test_unused_param_gets_zero_grad(self):
        params = ParamSet()
        params.add("used", [3.0])
        params.add("idle", np.ones((2, 2)))
        g = grad(lambda p: (p["used"] * 2.0).sum(), params)
        assert np.array_equal(g["used"], np.array([2.0]))
        assert np.array_equal(g["idle"], np.zeros((2, 2)))

    def test_backward_is_deterministic(self):
        params = ParamSet()
        rng = np.random.default_rng(3)
        params.add("w", rng.standard_normal((4, 3)))

        def loss(p):
            h = matmul(p["w"], Tensor(rng_fixed))
            return (h.tanh() * h).mean()

        rng_fixed = np.random.default_rng(4).standard_normal((3, 2))
        g1 = grad(loss, params)
        g2 = grad(loss, params)
        assert np.array_equal(g1["w"], g2["w"])

    def test_broadcast_add_sums_bias_grad(self):
        params = ParamSet()
        params.add("b", np.zeros(3))
        x = Tensor(np.ones((5, 3)))
        g = grad(lambda p: (x + p["b"]).sum(), params)
        assert np.array_equal(g["b"], np.full(3, 5.0))

    def test_abs_subgradient_zero_at_zero(self):
        params = ParamSet()
        params.add("w", [0.0, -2.0, 3.0])
        g = grad(lambda p: p["w"].abs().sum(), params)
        assert np.array_equal(g["w"], np.array([0.0, -1.0, 1.0]))

    def test_sqrt_subgradient_zero_at_zero(self):
        params = ParamSet()
        params.add("w", [0.0, 4.0])
        g = grad(lambda p: p["w"].sqrt().sum(), params)
        assert np.array_equal(g["w"], np.array([0.0, 0.25]))

    def test_concat_and_stack_route_grads(self):
        params = ParamSet()
        params.add("a", [[1.0, 2.0]])
        params.add("b", [[3.0, 4.0, 5.0]])
        g = grad(lambda p: (concat([p["a"], p["b"]], axis=1) * Tensor(
            [[1.0, 2.0, 3.0, 4.0, 5.0]])).sum(), params)
        assert np.array_equal(g["a"], np.array([[1.0, 2.0]]))
        assert np.array_equal(g["b"], np.array([[3.0, 4.0, 5.0]]))

        params2 = ParamSet()
        params2.add("a", [1.0, 2.0])
        params2.add("b", [3.0, 4.0])
        g2 = grad(lambda p: (stack([p["a"], p["b"]], axis=0)
                             * Tensor([[1.0, 1.0], [10.0, 10.0]])).sum(), params2)
        assert np.array_equal(g2["a"], np.array([1.0, 1.0]))
        assert np.array_equal(g2["b"], np.array([10.0, 10.0]))

    def test_reshape_roundtrip_grad(self):
        params = ParamSet()
        params.add("w", np.arange(6.0))
        g = grad(lambda p: (p["w"].reshape(2, 3) * Tensor(np.arange(6.0).reshape(2, 3))).sum(),
                 params)
        assert np.array_equal(g["w"], np.arange(6.0))

    def test_slice0_scatters_gradient(self):
        from aircast.numerics import slice0
        params = ParamSet()
        params.add("w", np.arange(5.0))
        g = grad(lambda p: (slice0(p["w"], 1, 4) * Tensor([1.0, 2.0, 3.0])).sum(),
                 params)
        assert np.array_equal(g["w"], np.array([0.0, 1.0, 2.0, 3.0, 0.0]))

    def test_reused_tensor_accumulates(self):
        # f(w) = w*w + 3w -> df/dw = 2w + 3 = 7 at w = 2
        params = ParamSet()
        params.add("w", [2.0])
        g = grad(lambda p: (p["w"] * p["w"] + 3.0 * p["w"]).sum(), params)
        assert np.array_equal(g["w"], np.array([7.0]))


class TestFiniteDifference:
    def test_l1_loss_gradient(self):
        rng = np.random.default_rng(7)
        truth = rng.standard_normal((4, 3))
        params = ParamSet()
        params.add("pred", truth + rng.uniform(0.1, 1.0, truth.shape))

        def loss(p):
            return (p["pred"] - Tensor(truth)).abs().mean()

        report = finite_difference_check(loss, params, h=1e-5)
        assert report["pred"] < 1e-4

    def test_composite_network_all_ops(self):
        # exercises matmul, concat, nonlinearities, reductions together
        for seed in range(3):
            rng = np.random.default_rng(seed)
            params = ParamSet()
            params.add("w1", 0.5 * rng.standard_normal((5, 4)))
            params.add("b1", 0.1 * rng.standard_normal(4))
            params.add("w2", 0.5 * rng.standard_normal((4, 2)))
            x = rng.standard_normal((3, 5))
            y = rng.standard_normal((3, 2))

            def loss(p, x=x, y=y):
                h = matmul(Tensor(x), p["w1"]) + p["b1"]
                h = concat([h.silu(), h.tanh()], axis=1)
                h = h.reshape(3, 2, 4).mean(axis=1)
                out = matmul(h.sigmoid(), p["w2"])
                resid = out - Tensor(y)
                return resid.square().mean() + 0.1 * resid.abs().mean() \
                    + 0.01 * resid.square().sum(axis=0).sqrt().mean()

            report = finite_difference_check(loss, params, h=1e-5)
            assert max(report.values()) < 1e-4, (seed, report)


class TestAdam:
    def test_zero_grad_is_fixed_point(self):
        params = ParamSet()
        params.add("w", [1.0, -2.0])
        state = AdamState.init(params, lr=0.1)
        zero = {"w": np.zeros(2)}
        for _ in range(5):
            adam_step(params, zero, state)
        assert np.array_equal(params["w"].data, np.array([1.0, -2.0]))
        assert np.all(state.m["w"] == 0.0) and np.all(state.v["w"] == 0.0)

    def test_first_step_closed_form(self):
        # with bias correction the first update is -lr * g / (|g| + eps)
        params = ParamSet()
        params.add("w", [1.0, -3.0])
        state = AdamState.init(params, lr=0.1)
        adam_step(params, {"w": np.array([2.0, -0.5])}, state)
        assert np.allclose(params["w"].data, np.array([0.9, -2.9]), atol=1e-8)
        assert state.t == 1

    def test_moments_decay_toward_zero(self):
        params = ParamSet()
        params.add("w", [0.0])
        state = AdamState.init(params, lr=0.0)
        adam_step(params, {"w": np.array([1.0])}, state)
        m0 = state.m["w"].copy()
        adam_step(params, {"w": np.array([0.0])}, state)
        assert abs(state.m["w"][0]) < abs(m0[0])

    def test_shape_mismatch_rejected(self):
        params = ParamSet()
        params.add("w", [1.0, 2.0])
        state = AdamState.init(params)
        with pytest.raises(DimensionError):
            adam_step(params, {"w": np.zeros(3)}, state)

    def test_descends_a_quadratic(self):
        params = ParamSet()
        params.add("w", [5.0])
        state = AdamState.init(params, lr=0.1)
        for _ in range(200):
            g = grad(lambda p: p["w"].square().sum(), params)
            adam_step(params, g, state)
        assert abs(params["w"].data[0]) < 0.5


class TestParamSet:
    def test_duplicate_name_rejected(self):
        params = ParamSet()
        params.add("w", [1.0])
        with pytest.raises(ValidationError):
            params.add("w", [2.0])

    def test_value_roundtrip(self):
        params = ParamSet()
        params.add("a", np.ones((2, 2)))
        params.add("b", np.zeros(3))
        snap = params.values_copy()
        params["a"].data += 5.0
        params.load_values(snap)
        assert np.array_equal(params["a"].data, np.ones((2, 2)))
        assert params.n_values() == 7

    def test_load_shape_mismatch(self):
        params = ParamSet()
        params.add("a", np.ones(2))
        with pytest.raises(DimensionError):
            params.load_values({"a": np.ones(3)})


class TestClipping:
    def test_clip_scales_to_max_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        norm = clip_grads_(grads, 1.0)
        assert abs(norm - 5.0) < 1e-12
        assert abs(global_grad_norm(grads) - 1.0) < 1e-12

    def test_below_threshold_untouched(self):
        grads = {"a": np.array([0.3, 0.4])}
        clip_grads_(grads, 5.0)
        assert np.array_equal(grads["a"], np.array([0.3, 0.4]))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from narrative_graph import numcore as nc
from narrative_graph.errors import ContractError, DimensionError, NumericError, ParameterError, TrainingError
from narrative_graph.numcore import Tensor
from narrative_graph.numcore.tensor import make_op

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def param(arr):
    return Tensor(np.array(arr, dtype=float), requires_grad=True)


def prob_vector(rng, n):
    x = rng.random(n) + 0.05
    return x / x.sum()


class TestTensor:
    def test_backward_accumulates_shared_parent(self):
        x = param([1.0, 2.0])
        y = (x * x + x).sum()
        y.backward()
        np.testing.assert_allclose(x.grad, [3.0, 5.0])

    def test_each_node_visited_once(self):
        x = param([2.0])
        a = x * 3.0
        b = a + a
        (b * a).sum().backward()
        # d/dx (2a * a) = 4a * 3 = 12 * 6 = 72
        np.testing.assert_allclose(x.grad, [72.0])

    def test_non_finite_op_raises(self):
        with pytest.raises(NumericError):
            nc.log(Tensor(np.array([-1.0])))

    def test_broadcast_gradient_is_reduced(self):
        w = param(np.ones((2, 3)))
        b = param(np.zeros(3))
        (w + b).sum().backward()
        np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])


class TestMatmul:
    def test_identity(self):
        b = np.array([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(nc.matmul(np.eye(2), b).data, b)

    def test_zero(self):
        out = nc.matmul(np.zeros((2, 2)), np.random.default_rng(0).normal(size=(2, 2)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_two_by_two_times_column(self):
        out = nc.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            nc.matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_backward(self, rng):
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        (nc.matmul(a, b) * g).sum().backward()
        np.testing.assert_allclose(a.grad, g @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ g)


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_allclose(nc.softmax_temp([0.0, 0.0], 1.0).data, [0.5, 0.5])

    def test_low_temperature_value(self):
        expected = math.exp(10) / (math.exp(10) + 1)
        np.testing.assert_allclose(nc.softmax_temp([1.0, 0.0], 0.1).data, [expected, 1 - expected], atol=1e-6)
        np.testing.assert_allclose(nc.softmax_temp([1.0, 0.0], 0.1).data, [0.9999546, 0.0000454], atol=1e-6)

    @given(c=finite, tau=st.floats(0.01, 10))
    def test_constant_input_is_uniform(self, c, tau):
        np.testing.assert_allclose(nc.softmax_temp([c] * 4, tau).data, [0.25] * 4)

    def test_non_positive_tau(self):
        with pytest.raises(ParameterError):
            nc.softmax_temp([1.0, 2.0], 0.0)

    @given(hnp.arrays(float, st.integers(1, 12), elements=st.floats(-50, 50)), st.floats(0.05, 5))
    def test_is_probability_vector(self, x, tau):
        p = nc.softmax_temp(x, tau).data
        assert abs(p.sum() - 1.0) < 1e-9
        assert np.all((p >= 0) & (p <= 1))

    def test_masked_entries_get_zero(self):
        p = nc.softmax_temp([1.0, 5.0, 2.0], 1.0, mask=np.array([True, False, True])).data
        assert p[1] == 0.0
        np.testing.assert_allclose(p.sum(), 1.0)

    def test_gradient(self, rng):
        x = param(rng.normal(size=5))
        w = rng.normal(size=5)
        assert nc.grad_check(lambda: (nc.softmax_temp(x, 0.3) * w).sum(), [x]) < 1e-6


class TestKL:
    def test_identical(self):
        assert nc.kl_divergence([0.3, 0.7], [0.3, 0.7]).item() == 0.0

    def test_point_mass_against_uniform(self):
        np.testing.assert_allclose(nc.kl_divergence([1.0, 0.0], [0.5, 0.5]).item(), math.log(2), atol=1e-6)

    def test_matches_extended_precision_oracle(self, rng):
        for _ in range(20):
            p, q = prob_vector(rng, 5), prob_vector(rng, 5)
            oracle = math.fsum(float(pi) * math.log(float(pi) / float(qi)) for pi, qi in zip(p, q))
            assert abs(nc.kl_divergence(p, q).item() - oracle) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            nc.kl_divergence([0.5, 0.5], [1 / 3] * 3)

    def test_rejects_non_distribution(self):
        with pytest.raises(ParameterError):
            nc.kl_divergence([0.5, 0.6], [0.5, 0.5])

    def test_floor_keeps_zero_teacher_finite(self):
        value = nc.kl_divergence([0.5, 0.5], [1.0, 0.0]).item()
        np.testing.assert_allclose(value, 0.5 * math.log(0.5) + 0.5 * math.log(0.5 / nc.KL_FLOOR))

    @settings(max_examples=50)
    @given(st.integers(2, 8), st.integers(0, 10_000))
    def test_gibbs_inequality(self, n, seed):
        r = np.random.default_rng(seed)
        assert nc.kl_divergence(prob_vector(r, n), prob_vector(r, n)).item() >= 0

    def test_gradient_both_arguments(self, rng):
        p, q = param(prob_vector(rng, 5)), param(prob_vector(rng, 5))
        assert nc.grad_check(lambda: nc.kl_divergence(p, q, check=False), [p, q]) < 1e-4


class TestStraightThroughTopk:
    def test_argmax(self):
        np.testing.assert_array_equal(nc.straight_through_topk([0.1, 0.6, 0.3], 1).data, [0, 1, 0])

    def test_full_selection(self):
        np.testing.assert_array_equal(nc.straight_through_topk([0.1, 0.6, 0.3], 3).data, [1, 1, 1])

    def test_identity_gradient(self, rng):
        p = param([0.1, 0.6, 0.3])
        g = rng.normal(size=3)
        nc.straight_through_topk(p, 2).backward(g)
        np.testing.assert_array_equal(p.grad, g)

    @pytest.mark.parametrize("k", [0, 4])
    def test_k_out_of_range(self, k):
        with pytest.raises(ParameterError):
            nc.straight_through_topk([0.1, 0.6, 0.3], k)

    def test_ties_go_to_lower_index(self):
        np.testing.assert_array_equal(nc.straight_through_topk([0.2, 0.4, 0.4, 0.0], 1).data, [0, 1, 0, 0])

    @given(hnp.arrays(float, st.integers(1, 10), elements=st.floats(0, 1)), st.data())
    def test_exactly_k_ones(self, p, data):
        k = data.draw(st.integers(1, len(p)))
        out = nc.straight_through_topk(p, k).data
        assert set(np.unique(out)) <= {0.0, 1.0}
        assert out.sum() == k
        # every selected entry is at least as large as every unselected one
        if k < len(p):
            assert p[out == 1].min() >= p[out == 0].max()


class TestGumbel:
    def test_strong_logit_wins(self):
        hits = sum(nc.gumbel_softmax_st([10.0, -10.0], 0.1, np.random.default_rng(s)).data[0] == 1.0
                   for s in range(100))
        assert hits >= 99

    def test_noise_off_is_argmax(self):
        np.testing.assert_array_equal(nc.gumbel_softmax_st([0.3, 2.0, 1.0], 0.1, noise=False).data, [0, 1, 0])

    def test_one_hot(self, rng):
        out = nc.gumbel_softmax_st(rng.normal(size=(4, 6)), 0.5, rng).data
        np.testing.assert_array_equal(out.sum(axis=1), np.ones(4))

    def test_backward_matches_surrogate_finite_differences(self, rng):
        logits = param(rng.normal(size=5))
        w = rng.normal(size=5)
        err = nc.grad_check(lambda: (nc.gumbel_softmax_st(logits, 0.5, np.random.default_rng(7)) * w).sum(), [logits])
        assert err < 1e-4

    def test_needs_rng_with_noise(self):
        with pytest.raises(ParameterError):
            nc.gumbel_softmax_st([1.0, 2.0], 0.1)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        params = {"w": param([1.0, -2.0])}
        state = nc.adam_step(params, {"w": np.zeros(2)}, nc.AdamState())
        np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])
        assert state.step_count == 1

    def test_first_step_size(self):
        params = {"w": param([0.5])}
        nc.adam_step(params, {"w": np.array([1.0])}, nc.AdamState())
        # bias-corrected m = 1, v = 1, so the step is lr / (1 + eps)
        np.testing.assert_allclose(params["w"].data, [0.5 - 1e-3 / (1 + 1e-8)], rtol=0, atol=1e-15)

    def test_two_steps_reduce_quadratic(self):
        params = {"w": param([3.0])}
        state = nc.AdamState(learning_rate=0.1)
        losses = []
        for _ in range(2):
            w = params["w"]
            losses.append(float((w.data[0] - 1.0) ** 2))
            nc.adam_step(params, {"w": 2 * (w.data - 1.0)}, state)
        losses.append(float((params["w"].data[0] - 1.0) ** 2))
        assert losses[2] < losses[1] < losses[0]

    def test_non_finite_gradient_names_parameter(self):
        with pytest.raises(TrainingError, match="bias"):
            nc.adam_step({"bias": param([1.0])}, {"bias": np.array([np.nan])}, nc.AdamState())

    def test_moments_match_shapes(self, rng):
        params = {"a": param(rng.normal(size=(2, 3)))}
        state = nc.adam_step(params, {"a": rng.normal(size=(2, 3))}, nc.AdamState())
        assert state.first_moment["a"].shape == (2, 3) == state.second_moment["a"].shape


class TestGradCheck:
    def test_sum_of_squares(self):
        x = param([1.0, 2.0, 3.0])
        assert nc.grad_check(lambda: (x * x).sum(), [x]) < 1e-8
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_output(self):
        x = param([1.0, 2.0])
        with pytest.raises(ContractError):
            nc.grad_check(lambda: x * 2.0, [x])

    @pytest.mark.parametrize("eps", [1e-9, 1e-2])
    def test_epsilon_range(self, eps):
        x = param([1.0])
        with pytest.raises(ParameterError):
            nc.grad_check(lambda: x.sum(), [x], epsilon=eps)

    def test_detects_wrong_gradient(self):
        x = param([0.7, -0.3])

        def broken():
            return make_op(np.asarray((x.data ** 2).sum()), (x,), lambda g: (g * x.data,))

        assert nc.grad_check(broken, [x]) > 0.1


class TestElementwiseOps:
    @pytest.mark.parametrize("op", [nc.tanh, nc.sigmoid, nc.exp, nc.relu, nc.layer_norm])
    def test_gradients(self, op, rng):
        x = param(rng.normal(size=(3, 4)) + 0.05)
        w = rng.normal(size=(3, 4))
        assert nc.grad_check(lambda: (op(x) * w).sum(), [x]) < 1e-6

    def test_composition(self, rng):
        a, b = param(rng.normal(size=(2, 3))), param(rng.normal(size=(3,)))
        c = param(rng.normal(size=(2, 3)))

        def f():
            x = nc.concat([nc.tanh(a) * b, nc.sigmoid(c) - a / (2.0 + c * c)], axis=0)
            return nc.mean_of([x.sum(), nc.dot(b, b), nc.stack([a.sum(), c.mean()]).sum()])

        assert nc.grad_check(f, [a, b, c]) < 1e-6

    def test_take_and_reshape(self, rng):
        x = param(rng.normal(size=(4, 3)))
        idx = np.array([0, 2, 2, 3])
        assert nc.grad_check(lambda: (nc.take(x, idx).reshape(12) * np.arange(12)).sum(), [x]) < 1e-6

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.normal(size=(5, 4)))
        assert nc.dropout(x, 0.2, rng, training=False) is x

    def test_dropout_train_mask_and_scale(self):
        x = Tensor(np.ones((200, 50)))
        out = nc.dropout(x, 0.2, np.random.default_rng(0), training=True).data
        assert set(np.unique(out)) <= {0.0, 1.25}
        assert abs((out == 0).mean() - 0.2) < 0.02

    def test_gaussian_parameter_is_seeded(self):
        a = nc.gaussian_parameter((3, 2), np.random.default_rng(5))
        b = nc.gaussian_parameter((3, 2), np.random.default_rng(5))
        np.testing.assert_array_equal(a.data, b.data)
        assert a.requires_grad

    def test_uniform_parameter_bounds(self):
        w = nc.uniform_parameter((50, 40), 16, np.random.default_rng(0))
        assert np.abs(w.data).max() <= 0.25


class TestLSTM:
    def _weights(self, rng, d_in, hidden):
        return (param(rng.normal(size=(4 * hidden, d_in)) * 0.5), param(rng.normal(size=(4 * hidden, hidden)) * 0.5),
                param(rng.normal(size=4 * hidden) * 0.1))

    def _reference(self, x, w_in, w_rec, bias, length, reverse):
        """Plain single-sequence LSTM, gate order i, f, o, g."""
        hidden = w_rec.shape[1]
        sig = lambda z: 1 / (1 + np.exp(-z))
        h, c = np.zeros(hidden), np.zeros(hidden)
        out = np.zeros((x.shape[0], hidden))
        steps = range(length - 1, -1, -1) if reverse else range(length)
        for t in steps:
            a = w_in @ x[t] + w_rec @ h + bias
            i, f, o = sig(a[:hidden]), sig(a[hidden:2 * hidden]), sig(a[2 * hidden:3 * hidden])
            g = np.tanh(a[3 * hidden:])
            c = f * c + i * g
            h = o * np.tanh(c)
            out[t] = h
        return out

    @pytest.mark.parametrize("reverse", [False, True])
    def test_matches_reference_with_padding(self, rng, reverse):
        x = rng.normal(size=(3, 5, 4))
        lengths = [5, 3, 1]
        mask = np.arange(5)[None, :] < np.array(lengths)[:, None]
        w = self._weights(rng, 4, 3)
        out = nc.lstm(Tensor(x), mask, *w, reverse=reverse).data
        for b, n in enumerate(lengths):
            ref = self._reference(x[b], *(t.data for t in w), n, reverse)
            np.testing.assert_allclose(out[b], ref, atol=1e-12)

    @pytest.mark.parametrize("full", [False, True])
    def test_bidirectional_gradient(self, rng, full):
        x = param(rng.normal(size=(3, 4, 5)))
        mask = np.ones((3, 4), bool) if full else np.arange(4)[None, :] < np.array([[4], [2], [1]])
        fwd, bwd = self._weights(rng, 5, 2), self._weights(rng, 5, 2)
        w = rng.normal(size=(3, 4, 4))
        assert nc.grad_check(lambda: (nc.bilstm_fused(x, mask, fwd, bwd) * w).sum(), [x, *fwd, *bwd]) < 1e-6

    def test_fused_equals_two_directions(self, rng):
        x = Tensor(rng.normal(size=(2, 6, 3)))
        mask = np.arange(6)[None, :] < np.array([[6], [4]])
        fwd, bwd = self._weights(rng, 3, 2), self._weights(rng, 3, 2)
        both = nc.bilstm_fused(x, mask, fwd, bwd).data
        np.testing.assert_array_equal(both[..., :2], nc.lstm(x, mask, *fwd).data)
        np.testing.assert_array_equal(both[..., 2:], nc.lstm(x, mask, *bwd, reverse=True).data)

    def test_shape_validation(self, rng):
        with pytest.raises(DimensionError):
            nc.lstm(Tensor(rng.normal(size=(1, 2, 3))), np.ones((1, 2), bool), *self._weights(rng, 4, 2))

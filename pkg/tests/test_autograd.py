"""Numeric core: hand-checked values, invariants, and finite-difference fidelity."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embdistill import autograd as ag
from embdistill.autograd import NumericError, Tensor, check_gradients


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for kk in range(k):
                out[i, j] += a[i, kk] * b[kk, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ag.matmul(Tensor(np.eye(2)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_orthogonal_basis(self):
        out = ag.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[0.0]])

    def test_matches_naive_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        out = ag.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, naive_matmul(a, b), atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="inner extents"):
            ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestSoftmaxRows:
    def test_symmetry(self):
        out = ag.softmax_rows(Tensor([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_shift_invariance_guards_overflow(self):
        out = ag.softmax_rows(Tensor([[1000.0, 1000.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_hand_value(self):
        out = ag.softmax_rows(Tensor([[0.0, math.log(3.0)]]))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-12)

    @given(
        st.integers(min_value=1, max_value=5),
        st.integers(min_value=1, max_value=7),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_rows_sum_to_one(self, m, n, seed):
        x = np.random.default_rng(seed).normal(scale=10.0, size=(m, n))
        out = ag.softmax_rows(Tensor(x))
        assert np.all(out.data >= 0.0)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(m), atol=1e-6)


class TestLayerNorm:
    def test_constant_row_handled_by_eps(self):
        gain = Tensor(np.ones(3))
        shift = Tensor(np.zeros(3))
        out = ag.layer_norm(Tensor([[5.0, 5.0, 5.0]]), gain, shift, eps=1e-5)
        np.testing.assert_allclose(out.data, np.zeros((1, 3)))

    def test_two_point_row(self):
        gain = Tensor(np.ones(2))
        shift = Tensor(np.zeros(2))
        out = ag.layer_norm(Tensor([1.0, 3.0]), gain, shift, eps=1e-12)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-5)

    def test_zero_gain_gives_shift(self):
        gain = Tensor(np.zeros(4))
        shift = Tensor(np.arange(4.0))
        out = ag.layer_norm(Tensor(np.random.default_rng(1).normal(size=(3, 4))), gain, shift)
        np.testing.assert_allclose(out.data, np.broadcast_to(np.arange(4.0), (3, 4)))

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_mean_zero_unit_variance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=3.0, size=(4, 16)) + rng.normal(scale=5.0, size=(4, 1))
        out = ag.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-10)
        mu = out.data.mean(axis=-1)
        var = out.data.var(axis=-1)
        assert np.all(np.abs(mu) <= 1e-5)
        assert np.all(np.abs(var - 1.0) <= 1e-3)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            ag.layer_norm(Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]), eps=0.0)


class TestMeanPool:
    def test_single_unmasked_row(self):
        x = Tensor([[1.0, 2.0], [9.0, 9.0]])
        out = ag.mean_pool(x, np.array([True, False]))
        np.testing.assert_allclose(out.data, [1.0, 2.0])

    def test_two_rows(self):
        x = Tensor([[1.0, 1.0], [3.0, 3.0]])
        out = ag.mean_pool(x, np.array([True, True]))
        np.testing.assert_allclose(out.data, [2.0, 2.0])

    def test_masked_third_row(self):
        x = Tensor([[1.0, 1.0], [3.0, 3.0], [9.0, 9.0]])
        out = ag.mean_pool(x, np.array([True, True, False]))
        np.testing.assert_allclose(out.data, [2.0, 2.0])

    def test_all_masked_is_error(self):
        with pytest.raises(NumericError, match="fully masked"):
            ag.mean_pool(Tensor([[1.0, 1.0]]), np.array([False]))


class TestL2Normalize:
    def test_three_four_five(self):
        out = ag.l2_normalize(Tensor([3.0, 4.0]))
        np.testing.assert_allclose(out.data, [0.6, 0.8])

    def test_idempotent_on_unit_vector(self):
        v = np.array([0.6, 0.8])
        out = ag.l2_normalize(Tensor(v))
        np.testing.assert_allclose(out.data, v, atol=1e-15)

    def test_zero_vector_is_error(self):
        with pytest.raises(NumericError, match="zero"):
            ag.l2_normalize(Tensor([0.0, 0.0]))


class TestOverflowPolicy:
    def test_exp_overflow_raises(self):
        with pytest.raises(NumericError):
            ag.exp(Tensor([1000.0]))

    def test_log_of_zero_raises(self):
        with pytest.raises(NumericError):
            ag.log(Tensor([0.0]))

    def test_division_by_zero_raises(self):
        with pytest.raises(NumericError):
            ag.div(Tensor([1.0]), Tensor([0.0]))


class TestBackwardContract:
    def test_gradients_match_parameter_shapes(self):
        rng = np.random.default_rng(0)
        w = ag.parameter(rng.normal(size=(3, 4)))
        b = ag.parameter(rng.normal(size=(4,)))
        x = Tensor(rng.normal(size=(2, 3)))
        loss = ag.tsum(ag.square(ag.add(ag.matmul(x, w), b)))
        loss.backward()
        assert w.grad.shape == w.shape
        assert b.grad.shape == b.shape

    def test_backward_deterministic_for_identical_forward(self):
        def grads():
            rng = np.random.default_rng(1)
            w = ag.parameter(rng.normal(size=(4, 4)))
            x = Tensor(rng.normal(size=(2, 4)))
            loss = ag.tsum(ag.softmax_rows(ag.matmul(x, w)))
            loss.backward()
            return w.grad

        assert np.array_equal(grads(), grads())


class TestDeterminism:
    def test_forward_values_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor(rng.normal(size=(4, 8)))
            w = Tensor(rng.normal(size=(8, 8)))
            out = ag.softmax_rows(ag.matmul(ag.gelu(x), w))
            return out.data

        a, b = run(), run()
        assert np.array_equal(a, b)


def _weighted_scalar(out: Tensor, seed: int = 0) -> Tensor:
    weights = np.random.default_rng(seed).normal(size=out.shape)
    return ag.tsum(ag.mul(out, weights))


def _op_cases(seed: int):
    rng = np.random.default_rng(seed)

    def t(*shape, positive=False, offset=0.0):
        data = rng.normal(size=shape)
        if positive:
            data = np.abs(data) + 0.5
        return ag.parameter(data + offset)

    x23, y23 = t(2, 3), t(2, 3)
    cases = {
        "add": ([x23, y23], lambda p: ag.add(p[0], p[1])),
        "add_broadcast": ([t(2, 3), t(3)], lambda p: ag.add(p[0], p[1])),
        "sub": ([t(2, 3), t(2, 3)], lambda p: ag.sub(p[0], p[1])),
        "mul": ([t(2, 3), t(2, 3)], lambda p: ag.mul(p[0], p[1])),
        "div": ([t(2, 3), t(2, 3, positive=True)], lambda p: ag.div(p[0], p[1])),
        "neg": ([t(2, 3)], lambda p: ag.neg(p[0])),
        "exp": ([t(2, 3)], lambda p: ag.exp(p[0])),
        "log": ([t(2, 3, positive=True)], lambda p: ag.log(p[0])),
        "sqrt": ([t(2, 3, positive=True)], lambda p: ag.sqrt(p[0])),
        "tanh": ([t(2, 3)], lambda p: ag.tanh(p[0])),
        "square": ([t(2, 3)], lambda p: ag.square(p[0])),
        "gelu": ([t(2, 3)], lambda p: ag.gelu(p[0])),
        "matmul": ([t(2, 3), t(3, 4)], lambda p: ag.matmul(p[0], p[1])),
        "matmul_batched": ([t(2, 3, 4), t(4, 5)], lambda p: ag.matmul(p[0], p[1])),
        "sum_axis": ([t(2, 3)], lambda p: ag.tsum(p[0], axis=0)),
        "mean": ([t(2, 3)], lambda p: ag.tmean(p[0], axis=-1)),
        "reshape_transpose": (
            [t(2, 6)],
            lambda p: ag.transpose(ag.reshape(p[0], (2, 3, 2)), (1, 0, 2)),
        ),
        "gather_rows": ([t(5, 3)], lambda p: ag.gather_rows(p[0], np.array([0, 2, 2, 4]))),
        "stack_rows": ([t(3), t(3)], lambda p: ag.stack_rows([p[0], p[1]])),
        "softmax_rows": ([t(3, 4)], lambda p: ag.softmax_rows(p[0])),
        "layer_norm": (
            [t(3, 4), t(4), t(4)],
            lambda p: ag.layer_norm(p[0], p[1], p[2], eps=1e-5),
        ),
        "mean_pool": (
            [t(2, 3, 4)],
            lambda p: ag.mean_pool(p[0], np.array([[True, True, False], [True, True, True]])),
        ),
        "l2_normalize": ([t(3, 4, offset=2.0)], lambda p: ag.l2_normalize(p[0])),
    }
    return cases


OP_NAMES = sorted(_op_cases(0))


class TestGradientFidelity:
    """Every differentiable op matches central finite differences at tol 1e-3."""

    @pytest.mark.parametrize("op_name", OP_NAMES)
    def test_op_passes_check_gradients(self, op_name):
        for seed in range(20):
            params, build = _op_cases(seed)[op_name]
            report = check_gradients(
                lambda p, build=build, seed=seed: _weighted_scalar(build(p), seed),
                params,
                h=1e-4,
                tol=1e-3,
            )
            assert report.passed, f"{op_name} seed {seed}: {report.failures[:3]}"

    def test_quadratic_example(self):
        theta = ag.parameter(np.array([1.0, 2.0]))
        report = check_gradients(lambda p: ag.tsum(ag.square(p[0])), [theta])
        assert report.passed
        theta.zero_grad()
        loss = ag.tsum(ag.square(theta))
        loss.backward()
        np.testing.assert_allclose(theta.grad, [2.0, 4.0], atol=1e-12)

    def test_report_lists_failures(self):
        # A wrong "gradient" comes from treating the parameter as constant.
        theta = ag.parameter(np.array([1.5]))

        def f(params):
            return ag.mul(ag.tsum(ag.square(params[0])), 1.0)

        report = check_gradients(f, [ag.parameter(np.array([1.5]))], h=1e-4, tol=1e-3)
        assert report.passed  # sanity: the real gradient passes
        # Now check a detached path produces a recorded failure, not an exception.
        frozen = ag.parameter(np.array([1.5]))

        def g(params):
            return ag.add(ag.tsum(ag.square(Tensor(params[0].data))), ag.tsum(ag.mul(params[0], 0.0)))

        report = check_gradients(g, [frozen], h=1e-4, tol=1e-3)
        assert not report.passed
        assert report.failures[0].analytic == 0.0


class TestDropout:
    def test_scales_kept_entries(self):
        x = ag.parameter(np.ones((100, 10)))
        out = ag.dropout(x, 0.5, np.random.default_rng(3))
        values = np.unique(out.data)
        assert set(values.tolist()) <= {0.0, 2.0}

    def test_backward_reuses_mask(self):
        x = ag.parameter(np.ones((20, 5)))
        out = ag.dropout(x, 0.3, np.random.default_rng(5))
        ag.tsum(out).backward()
        kept = out.data != 0.0
        np.testing.assert_allclose(x.grad[kept], 1.0 / 0.7)
        np.testing.assert_allclose(x.grad[~kept], 0.0)

    def test_rate_zero_is_identity(self):
        x = ag.parameter(np.ones((4, 4)))
        out = ag.dropout(x, 0.0, np.random.default_rng(0))
        assert out is x

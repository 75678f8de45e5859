"""Loss functions against independent naive-summation oracles."""

import math

import numpy as np
import pytest

from embdistill import autograd as ag
from embdistill.autograd import NumericError, check_gradients
from embdistill.errors import DataError
from embdistill.losses import contrastive_loss, cosine_distance_loss


def naive_cosine_distance(teacher: np.ndarray, student: np.ndarray) -> float:
    n = teacher.shape[0]
    total = 0.0
    for i in range(n):
        t, s = teacher[i], student[i]
        total += float(t @ s) / (np.linalg.norm(t) * np.linalg.norm(s))
    return -total / n


def naive_contrastive(teacher: np.ndarray, student: np.ndarray, tau: float) -> float:
    def sim(a, b):
        return float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))

    n = teacher.shape[0]
    total = 0.0
    for i in range(n):
        numerator = math.exp(sim(teacher[i], student[i]) / tau)
        denom = sum(math.exp(sim(teacher[j], student[i]) / tau) for j in range(n))
        denom += sum(math.exp(sim(student[j], student[i]) / tau) for j in range(n) if j != i)
        total += math.log(numerator / denom)
    return -total / n


class TestCosineDistanceLoss:
    def test_perfect_alignment(self):
        rows = np.eye(3)
        loss = cosine_distance_loss(rows, ag.Tensor(rows))
        assert float(loss.data) == pytest.approx(-1.0, abs=1e-12)

    def test_orthogonal_rows(self):
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        s = np.array([[0.0, 1.0], [1.0, 0.0]])
        loss = cosine_distance_loss(t, ag.Tensor(s))
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        loss = cosine_distance_loss(np.array([[1.0, 0.0]]), ag.Tensor([[1.0, 1.0]]))
        assert float(loss.data) == pytest.approx(-1.0 / math.sqrt(2.0), abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.normal(size=(4, 6))
            s = rng.normal(size=(4, 6))
            value = float(cosine_distance_loss(t, ag.Tensor(s)).data)
            assert -1.0 - 1e-9 <= value <= 1.0 + 1e-9

    def test_zero_row_is_error(self):
        t = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(NumericError):
            cosine_distance_loss(t, ag.Tensor(np.ones((2, 2))))

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            d = int(rng.integers(2, 17))
            t = rng.normal(size=(n, d))
            s = rng.normal(size=(n, d))
            ours = float(cosine_distance_loss(t, ag.Tensor(s)).data)
            assert ours == pytest.approx(naive_cosine_distance(t, s), abs=1e-6)


class TestContrastiveLoss:
    def test_single_element_batch_is_exactly_zero(self):
        rng = np.random.default_rng(2)
        t = rng.normal(size=(1, 5))
        s = rng.normal(size=(1, 5))
        loss = contrastive_loss(t, ag.Tensor(s), tau=0.05)
        assert float(loss.data) == 0.0

    def test_two_point_identity_hand_value(self):
        rows = np.eye(2)
        loss = contrastive_loss(rows, ag.Tensor(rows), tau=1.0)
        # numerator e^1; denominator e^1 + e^0 + e^0 (the other teacher and student)
        expected = -math.log(math.e / (math.e + 1.0 + 1.0))
        assert float(loss.data) == pytest.approx(expected, abs=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = rng.normal(size=(5, 8))
            s = rng.normal(size=(5, 8))
            assert float(contrastive_loss(t, ag.Tensor(s), tau=0.05).data) >= 0.0

    def test_invalid_temperature(self):
        with pytest.raises(DataError, match="positive"):
            contrastive_loss(np.ones((2, 2)), ag.Tensor(np.ones((2, 2))), tau=0.0)

    @pytest.mark.parametrize("tau", [0.01, 0.05, 1.0])
    def test_matches_naive_oracle(self, tau):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            d = int(rng.integers(2, 17))
            t = rng.normal(size=(n, d))
            s = rng.normal(size=(n, d))
            ours = float(contrastive_loss(t, ag.Tensor(s), tau=tau).data)
            expected = naive_contrastive(t, s, tau)
            assert ours == pytest.approx(expected, abs=1e-6), (n, d, tau)

    def test_small_tau_remains_finite(self):
        rng = np.random.default_rng(5)
        t = rng.normal(size=(6, 8))
        s = rng.normal(size=(6, 8))
        value = float(contrastive_loss(t, ag.Tensor(s), tau=0.01).data)
        assert np.isfinite(value)


class TestLossGradients:
    def test_cosine_gradient_fidelity(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            t = rng.normal(size=(2, 4))
            s = ag.parameter(rng.normal(size=(2, 4)))
            report = check_gradients(lambda p: cosine_distance_loss(t, p[0]), [s], h=1e-4, tol=1e-3)
            assert report.passed, (seed, report.failures[:3])

    @pytest.mark.parametrize("tau", [0.05, 0.01])
    def test_contrastive_gradient_fidelity(self, tau):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            t = rng.normal(size=(3, 4))
            s = ag.parameter(rng.normal(size=(3, 4)))
            report = check_gradients(
                lambda p: contrastive_loss(t, p[0], tau=tau), [s], h=1e-5, tol=1e-3
            )
            assert report.passed, (seed, tau, report.failures[:3])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DataError, match="match"):
            cosine_distance_loss(np.ones((2, 3)), ag.Tensor(np.ones((2, 4))))

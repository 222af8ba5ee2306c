import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from balms.errors import InvalidSpecError
from balms.losses import (
    LossSpec,
    balanced_logits,
    balanced_phi,
    balanced_softmax_dlogits,
    balanced_softmax_loss,
    binary_logistic_balanced_dlogits,
    binary_logistic_balanced_loss,
    binary_logistic_offsets,
    cbw_weights,
    margin_objective,
    optimal_margins,
    overbalance_ratio,
    sigmoid_ce,
    softmax_ce,
    softmax_ce_dlogits,
    softmax_probs,
)

from oracles import central_fd, naive_ce

logit_vec = arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_probs([0, 0, 0]), [1 / 3] * 3, rtol=1e-15)

    def test_log_two(self):
        np.testing.assert_allclose(softmax_probs([0, np.log(2)]), [1 / 3, 2 / 3], rtol=1e-15)

    def test_no_overflow(self):
        p = softmax_probs([1000.0, 0.0])
        assert np.all(np.isfinite(p))
        assert p[0] == 1.0 and p[1] < 1e-300

    @given(logit_vec, st.floats(-100, 100))
    def test_shift_invariance(self, z, c):
        np.testing.assert_allclose(softmax_probs(z + c), softmax_probs(z), atol=1e-10)
        assert abs(softmax_ce(z + c, 0) - softmax_ce(z, 0)) < 1e-10

    @given(logit_vec)
    def test_sums_to_one(self, z):
        assert abs(softmax_probs(z).sum() - 1) < 1e-12

    def test_ce_matches_naive(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(20, 5))
        y = rng.integers(0, 5, 20)
        np.testing.assert_allclose(softmax_ce(z, y), naive_ce(z, y), atol=1e-12)


class TestBalancedPhi:
    def test_equal_counts_is_softmax(self):
        z = np.array([0.3, -1.2, 2.0])
        for q in (0.25, 1.0, 3.0):
            np.testing.assert_array_equal(balanced_phi(z, [7, 7, 7], q), softmax_probs(z))

    def test_three_to_one(self):
        np.testing.assert_allclose(balanced_phi([0, 0], [3, 1]), [0.75, 0.25], rtol=1e-15)

    def test_quarter_power(self):
        np.testing.assert_allclose(balanced_phi([0, 0], [100, 1], 0.25), [0.7597, 0.2403], atol=1e-4)

    @pytest.mark.parametrize("q", [0.0, -1.0])
    def test_bad_q(self, q):
        with pytest.raises(InvalidSpecError):
            balanced_phi([0, 0], [3, 1], q)

    @settings(max_examples=50)
    @given(z=arrays(np.float64, 4, elements=st.floats(-10, 10)),
           counts=st.lists(st.integers(1, 10000), min_size=4, max_size=4),
           q=st.sampled_from([0.25, 0.5, 1.0]))
    def test_argmax_follows_adjusted_logits(self, z, counts, q):
        adj = z + q * np.log(counts)
        if np.sort(adj)[-1] - np.sort(adj)[-2] < 1e-9:
            return
        assert np.argmax(balanced_phi(z, counts, q)) == np.argmax(adj)
        assert abs(balanced_phi(z, counts, q).sum() - 1) < 1e-12


class TestBalancedSoftmaxLoss:
    def test_equal_counts(self):
        assert balanced_softmax_loss([0, 0], 0, [5, 5]) == pytest.approx(np.log(2), abs=1e-15)

    def test_tail_and_head(self):
        assert balanced_softmax_loss([0, 0], 1, [3, 1]) == pytest.approx(1.386294, abs=1e-6)
        assert balanced_softmax_loss([0, 0], 0, [3, 1]) == pytest.approx(0.287682, abs=1e-6)

    def test_gradient_example(self):
        np.testing.assert_allclose(balanced_softmax_dlogits([0, 0], 1, [3, 1]), [0.75, -0.75], atol=1e-15)

    @settings(max_examples=50)
    @given(z=arrays(np.float64, 3, elements=st.floats(-15, 15)),
           counts=st.lists(st.integers(1, 5000), min_size=3, max_size=3),
           q=st.sampled_from([0.25, 1.0]), y=st.integers(0, 2))
    def test_equals_ce_on_adjusted_logits(self, z, counts, q, y):
        adj = z + q * np.log(np.asarray(counts, float))
        assert abs(balanced_softmax_loss(z, y, counts, q) - softmax_ce(adj, y)) < 1e-12
        np.testing.assert_array_equal(balanced_logits(z, counts, q), adj)

    @settings(max_examples=30)
    @given(z=arrays(np.float64, 3, elements=st.floats(-15, 15)),
           counts=st.lists(st.integers(1, 5000), min_size=3, max_size=3), y=st.integers(0, 2))
    def test_gradient_identity(self, z, counts, y):
        want = balanced_phi(z, counts) - np.eye(3)[y]
        np.testing.assert_array_equal(balanced_softmax_dlogits(z, y, counts), want)

    def test_equal_counts_gradient_is_softmax(self):
        z = np.array([0.1, 2.0, -0.5])
        np.testing.assert_allclose(balanced_softmax_dlogits(z, 2, [4, 4, 4]), softmax_ce_dlogits(z, 2), atol=1e-15)

    @pytest.mark.parametrize("q", [1.0, 0.25])
    def test_finite_differences(self, q):
        rng = np.random.default_rng(1)
        counts = [500, 20, 3]
        for _ in range(10):
            z, y = rng.normal(size=3) * 3, int(rng.integers(0, 3))
            fd = central_fd(lambda v: balanced_softmax_loss(v, y, counts, q), z)
            np.testing.assert_allclose(balanced_softmax_dlogits(z, y, counts, q), fd, atol=1e-8)

    @given(logit_vec.filter(lambda z: z.size == 3), st.floats(-50, 50))
    def test_shift_invariance(self, z, c):
        a = balanced_softmax_loss(z, 1, [9, 3, 1], 0.25)
        assert abs(balanced_softmax_loss(z + c, 1, [9, 3, 1], 0.25) - a) < 1e-10


class TestBinaryLogistic:
    def test_offsets_equal_counts(self):
        np.testing.assert_allclose(binary_logistic_offsets([4, 4, 4]), 0.0, atol=1e-15)

    def test_offsets_three_to_one(self):
        np.testing.assert_allclose(binary_logistic_offsets([3, 1]), [np.log(1 / 3), np.log(3)], atol=1e-12)

    def test_degenerate(self):
        # a class holding every sample leaves n - n_j = 0
        with pytest.raises(InvalidSpecError):
            binary_logistic_offsets(np.array([5, 0]))

    def test_equal_counts_is_sigmoid_ce(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            z, y = rng.normal(size=4) * 4, int(rng.integers(0, 4))
            assert abs(binary_logistic_balanced_loss(z, y, [6] * 4) - sigmoid_ce(z, y)) <= 1e-12

    def test_stable_for_large_logits(self):
        v = binary_logistic_balanced_loss([800.0, -800.0], 0, [3, 1])
        assert np.isfinite(v) and v < 1e-6

    def test_finite_differences(self):
        rng = np.random.default_rng(3)
        counts = [50, 10, 2]
        for _ in range(10):
            z, y = rng.normal(size=3) * 3, int(rng.integers(0, 3))
            fd = central_fd(lambda v: binary_logistic_balanced_loss(v, y, counts), z)
            np.testing.assert_allclose(binary_logistic_balanced_dlogits(z, y, counts), fd, atol=1e-8)

    def test_sigmoid_ce_definition(self):
        z = np.array([0.5, -1.0])
        p = 1 / (1 + np.exp(-z))
        want = -(np.log(p[1]) + np.log(1 - p[0]))
        assert sigmoid_ce(z, 1) == pytest.approx(want, abs=1e-14)


class TestWeightsAndMargins:
    def test_cbw_equal(self):
        np.testing.assert_array_equal(cbw_weights([5, 5]), [1, 1])

    def test_cbw_three_to_one(self):
        np.testing.assert_allclose(cbw_weights([3, 1]), [2 / 3, 2], rtol=1e-15)

    @given(st.lists(st.integers(1, 1000), min_size=2, max_size=10))
    def test_cbw_total(self, counts):
        assert np.dot(cbw_weights(counts), counts) == pytest.approx(sum(counts), rel=1e-12)

    def test_margins_equal(self):
        np.testing.assert_allclose(optimal_margins([9, 9, 9, 9]), 0.25, rtol=1e-15)

    @pytest.mark.parametrize("counts,want", [([16, 1], [1 / 3, 2 / 3]),
                                             ([256, 16, 1], [1 / 7, 2 / 7, 4 / 7])])
    def test_margins_closed_form(self, counts, want):
        np.testing.assert_allclose(optimal_margins(counts, 1.0), want, atol=1e-9)

    @given(st.lists(st.integers(1, 10**6), min_size=2, max_size=8), st.floats(0.01, 100))
    def test_margins_sum_and_order(self, counts, beta):
        counts = sorted(counts, reverse=True)
        g = optimal_margins(counts, beta)
        assert abs(g.sum() - beta) < 1e-12 * max(1, beta)
        assert np.all(np.diff(g) >= -1e-15)

    def test_objective_scaling(self):
        g, c = [0.2, 0.8], [16, 1]
        assert margin_objective(g, c, 2.0) == pytest.approx(np.sqrt(2) * margin_objective(g, c, 1.0), rel=1e-14)

    def test_objective_uniform_optimal_for_equal_counts(self):
        counts = [10, 10, 10]
        best = margin_objective([1 / 3] * 3, counts)
        for a, b in itertools.product(np.arange(1, 99) / 100, repeat=2):
            if a + b < 1 - 1e-12:
                assert margin_objective([a, b, 1 - a - b], counts) >= best - 1e-12

    def test_objective_bad_gamma(self):
        with pytest.raises(InvalidSpecError):
            margin_objective([0.0, 1.0], [3, 1])


class TestOverbalance:
    def test_moderate_margin(self):
        assert overbalance_ratio([10, 0], [100, 1], 0, 1) == pytest.approx(0.01, rel=0.01)

    def test_equal_counts(self):
        assert overbalance_ratio([3.0, -1.0, 0.5], [7, 7, 7], 0, 2) == 1.0

    def test_large_margin(self):
        assert overbalance_ratio([30, 0], [100, 1], 0, 1) == pytest.approx(0.01, rel=1e-6)

    def test_same_class_rejected(self):
        with pytest.raises(InvalidSpecError):
            overbalance_ratio([1, 0], [3, 1], 0, 0)


class TestLossSpec:
    def test_requires_counts(self):
        with pytest.raises(InvalidSpecError):
            LossSpec("balanced_softmax")

    def test_class_mismatch(self):
        with pytest.raises(InvalidSpecError):
            LossSpec.balanced([3, 1]).per_sample(np.zeros((2, 3)), [0, 1])

    def test_weighted_batch_mean(self):
        spec = LossSpec.balanced([5, 2, 1])
        rng = np.random.default_rng(0)
        z, y, w = rng.normal(size=(4, 3)), np.array([0, 1, 2, 1]), np.array([1.0, 0.5, 2.0, 0.0])
        losses, dl = spec.per_sample(z, y)
        value, dlw = spec.batch(z, y, w)
        assert value == pytest.approx(np.dot(w, losses) / 4, abs=1e-15)
        np.testing.assert_allclose(dlw, dl * w[:, None] / 4, atol=1e-15)

    def test_cbw_kind(self):
        spec = LossSpec("softmax_ce_cbw", [3, 1])
        z, y = np.zeros((2, 2)), np.array([0, 1])
        losses, _ = spec.per_sample(z, y)
        np.testing.assert_allclose(losses, [2 / 3 * np.log(2), 2 * np.log(2)], rtol=1e-14)

    def test_describe(self):
        assert LossSpec.balanced([3, 1], 0.25).describe() == "balanced_softmax_q0.25"

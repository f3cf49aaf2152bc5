"""Loss tests: CTC vs the exhaustive-path oracle, GE2E closed forms, L2."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convoice.kernels import ShapeError, grad_check
from convoice.losses import (
    CtcInfeasibleError,
    InputError,
    SizeError,
    collapse,
    ctc_brute_force,
    ctc_loss,
    ge2e_loss,
    l2_loss,
)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TestCollapse:
    def test_examples(self):
        assert collapse([0, 1, 1, 0, 2]) == (1, 2)
        assert collapse([1, 0, 1]) == (1, 1)
        assert collapse([0, 0, 0]) == ()

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=8))
    def test_matches_groupby_reference(self, path):
        from itertools import groupby

        c = collapse(path)
        assert 0 not in c
        assert c == tuple(k for k, _ in groupby(path) if k != 0)


class TestCtcLoss:
    def test_single_frame_uniform(self):
        logits = np.zeros((1, 3))
        loss, _ = ctc_loss(logits, [2])
        np.testing.assert_allclose(loss, -math.log(1 / 3), atol=1e-12)

    def test_two_frame_closed_form(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((2, 2))
        p = softmax(logits)
        expected = -math.log(p[0, 1] * p[1, 1] + p[0, 1] * p[1, 0] + p[0, 0] * p[1, 1])
        loss, _ = ctc_loss(logits, [1])
        np.testing.assert_allclose(loss, expected, atol=1e-12)

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((5, 4))
        loss, _ = ctc_loss(logits, [2, 3])
        oracle = ctc_brute_force(softmax(logits), [2, 3])
        np.testing.assert_allclose(loss, oracle, atol=1e-10)

    def test_grid_against_brute_force(self):
        rng = np.random.default_rng(2)
        for t in range(1, 7):
            for v in (2, 3, 4):
                for tlen in range(0, 4):
                    for _ in range(5):
                        logits = rng.standard_normal((t, v)) * 2
                        target = list(rng.integers(1, v, size=tlen))
                        repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
                        feasible = len(target) + repeats <= t
                        if feasible:
                            loss, _ = ctc_loss(logits, target)
                            oracle = ctc_brute_force(softmax(logits), target)
                            np.testing.assert_allclose(loss, oracle, atol=1e-10)
                        else:
                            with pytest.raises(CtcInfeasibleError):
                                ctc_loss(logits, target)
                            with pytest.raises(CtcInfeasibleError):
                                ctc_brute_force(softmax(logits), target)

    def test_empty_target(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((4, 3))
        loss, _ = ctc_loss(logits, [])
        p = softmax(logits)
        np.testing.assert_allclose(loss, -np.log(p[:, 0]).sum(), atol=1e-12)

    def test_infeasible_raises_not_inf(self):
        with pytest.raises(CtcInfeasibleError):
            ctc_loss(np.zeros((1, 3)), [1, 2])
        with pytest.raises(CtcInfeasibleError):
            ctc_loss(np.zeros((2, 3)), [1, 1])  # repeat needs a separating blank

    def test_shift_invariance(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((6, 4))
        shift = rng.standard_normal((6, 1)) * 10
        l1, g1 = ctc_loss(logits, [1, 2, 1])
        l2_, g2 = ctc_loss(logits + shift, [1, 2, 1])
        np.testing.assert_allclose(l1, l2_, atol=1e-10)
        np.testing.assert_allclose(g1, g2, atol=1e-10)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((5, 4))

        def fn(params):
            loss, grad = ctc_loss(params[0], [1, 3])
            return loss, [grad]

        assert grad_check(fn, [logits], eps=1e-6) < 1e-6

    def test_gradient_empty_target(self):
        rng = np.random.default_rng(6)

        def fn(params):
            loss, grad = ctc_loss(params[0], [])
            return loss, [grad]

        assert grad_check(fn, [rng.standard_normal((4, 3))], eps=1e-6) < 1e-6

    def test_blank_in_target_rejected(self):
        with pytest.raises(InputError):
            ctc_loss(np.zeros((3, 3)), [0, 1])


class TestCtcBruteForce:
    def test_bounds(self):
        with pytest.raises(SizeError):
            ctc_brute_force(np.full((9, 2), 0.5), [1])
        with pytest.raises(SizeError):
            ctc_brute_force(np.full((2, 6), 1 / 6), [1])

    def test_infeasible_target(self):
        with pytest.raises(CtcInfeasibleError):
            ctc_brute_force(np.full((2, 3), 1 / 3), [1, 2, 1])

    def test_certain_blank_empty_target(self):
        probs = np.zeros((3, 2))
        probs[:, 0] = 1.0
        assert ctc_brute_force(probs, []) == 0.0


class TestGe2eLoss:
    def orthogonal_batch(self):
        e = np.zeros((2, 2, 4))
        e[0, :, 0] = 1.0
        e[1, :, 1] = 1.0
        return e

    def test_orthogonal_identical_closed_form(self):
        loss, _ = ge2e_loss(self.orthogonal_batch(), w=1.0, b=0.0)
        np.testing.assert_allclose(loss, 4 * math.log(1 + math.exp(-1)), atol=1e-12)

    def test_all_identical_gives_uniform(self):
        n, m = 3, 4
        e = np.zeros((n, m, 5))
        e[:, :, 2] = 1.0
        loss, _ = ge2e_loss(e, w=2.0, b=-1.0)
        np.testing.assert_allclose(loss, n * m * math.log(n), atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(7)
        e = rng.standard_normal((2, 3, 4))
        e /= np.linalg.norm(e, axis=2, keepdims=True)

        def fn(params):
            emb = params[0].reshape(2, 3, 4)
            loss, (de, dw, db) = ge2e_loss(emb, float(params[1][0]), float(params[2][0]),
                                           validate=False)
            return loss, [de.reshape(-1), np.array([dw]), np.array([db])]

        err = grad_check(fn, [e.reshape(-1), np.array([3.0]), np.array([-0.5])], eps=1e-6)
        assert err < 1e-5

    def test_loss_decreases_as_own_similarity_rises(self):
        # rotate e[0,0] toward its own centroid in a plane orthogonal to the
        # other speaker's subspace, leaving every cross similarity fixed
        losses = []
        for theta in np.linspace(0.1, 1.4, 8):
            e = np.zeros((2, 2, 8))
            e[0, 0, 2] = math.cos(theta)
            e[0, 0, 1] = math.sin(theta)
            e[0, 1, 1] = 1.0
            e[1, 0, 3] = 1.0
            e[1, 1, 4] = 1.0
            loss, _ = ge2e_loss(e, w=5.0, b=0.0)
            losses.append(loss)
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_batch_invariants(self):
        with pytest.raises(InputError):
            ge2e_loss(np.zeros((1, 3, 4)), 1.0, 0.0)
        with pytest.raises(InputError):
            ge2e_loss(np.zeros((3, 1, 4)), 1.0, 0.0)
        bad = np.full((2, 2, 4), 0.9)
        with pytest.raises(InputError):
            ge2e_loss(bad, 1.0, 0.0)


class TestL2Loss:
    def test_equal_inputs(self):
        x = np.random.default_rng(0).standard_normal((80, 7))
        loss, grad = l2_loss(x, x)
        assert loss == 0.0
        assert not grad.any()

    def test_unit_offset(self):
        x = np.zeros((4, 5))
        loss, _ = l2_loss(x + 1.0, x)
        assert loss == 1.0

    def test_matches_hand_sum(self):
        rng = np.random.default_rng(8)
        p = rng.standard_normal((3, 4))
        t = rng.standard_normal((3, 4))
        expected = sum((p[i, j] - t[i, j]) ** 2 for i in range(3) for j in range(4)) / 12
        loss, grad = l2_loss(p, t)
        np.testing.assert_allclose(loss, expected, atol=1e-15)
        np.testing.assert_allclose(grad, 2 * (p - t) / 12, atol=1e-15)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        t = rng.standard_normal((3, 4))

        def fn(params):
            loss, grad = l2_loss(params[0], t)
            return loss, [grad]

        assert grad_check(fn, [rng.standard_normal((3, 4))], eps=1e-6) < 1e-7

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l2_loss(np.zeros((2, 3)), np.zeros((3, 2)))

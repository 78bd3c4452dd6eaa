"""Forward/backward correctness of the classifier core."""

import numpy as np
import pytest

from bfarl.model import (LOGIT_CLAMP, Gradients, ModelParams, ShapeError,
                         TrainConfig, bce_batch, bce_loss, flatten, forward,
                         forward_batch, grad, init_params, predict_labels,
                         sgd_step)
from bfarl.losses import make_bce_loss_fn


def linear_model(w, b=0.0):
    w = np.asarray(w, dtype=float).reshape(-1, 1)
    return ModelParams((w,), (np.array([float(b)]),))


class TestForward:
    def test_zero_net_gives_half(self):
        params = init_params(4, (8,), seed=0)
        zeroed = ModelParams(
            tuple(np.zeros_like(w) for w in params.layer_weights),
            tuple(np.zeros_like(b) for b in params.layer_biases))
        assert forward(zeroed, np.ones(4)) == 0.5

    def test_zero_input_single_layer(self):
        assert forward(linear_model([1.0, 1.0]), [0.0, 0.0]) == 0.5

    def test_hand_evaluated_sigmoid(self):
        # logit = 2*1 - 1 = 1
        p = forward(linear_model([2.0], b=-1.0), [1.0])
        assert p == pytest.approx(0.7310585786300049, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            forward(linear_model([1.0, 2.0]), [1.0])

    def test_output_strictly_inside_unit_interval(self):
        huge = linear_model([1000.0])
        for x in (-1.0, 1.0):
            p = forward(huge, [x])
            assert 0.0 < p < 1.0

    def test_threshold_tie_goes_positive(self):
        labels = predict_labels(linear_model([1.0, 1.0]), np.zeros((1, 2)))
        assert labels[0] == 1


class TestBce:
    def test_uniform_prediction(self):
        assert bce_loss(0.5, 1) == pytest.approx(np.log(2.0), abs=1e-15)

    def test_hand_values(self):
        assert bce_loss(0.8, 1) == pytest.approx(0.22314355131420976, abs=1e-12)
        assert bce_loss(0.8, -1) == pytest.approx(1.6094379124341003, abs=1e-12)

    def test_rejects_degenerate_probability(self):
        with pytest.raises(ValueError):
            bce_loss(0.0, 1)
        with pytest.raises(ValueError):
            bce_loss(1.0, -1)

    def test_batch_matches_scalar(self):
        probs = np.array([0.2, 0.5, 0.9])
        y = np.array([1, -1, -1])
        expect = [bce_loss(p, yi) for p, yi in zip(probs, y)]
        assert np.allclose(bce_batch(probs, y), expect, atol=1e-15)


def fd_gradient(params, x, y, a, loss_fn, h=1e-5):
    """Central finite differences over every parameter entry."""

    def loss_at(p):
        probs, logits, _ = forward_batch(p, x)
        values, _ = loss_fn(probs, logits, y, a)
        return float(np.mean(values))

    gw, gb = [], []
    for t in range(len(params.layer_weights)):
        for store, attr in ((gw, "layer_weights"), (gb, "layer_biases")):
            if attr == "layer_weights":
                base = params.layer_weights[t]
            else:
                base = params.layer_biases[t]
            g = np.zeros_like(base)
            it = np.nditer(base, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                def perturbed(delta):
                    arrs = [w.copy() for w in getattr(params, attr)]
                    arrs[t][idx] += delta
                    if attr == "layer_weights":
                        return ModelParams(tuple(arrs), params.layer_biases, params.activation)
                    return ModelParams(params.layer_weights, tuple(arrs), params.activation)
                g[idx] = (loss_at(perturbed(h)) - loss_at(perturbed(-h))) / (2 * h)
            store.append(g)
    return Gradients(tuple(gw), tuple(gb))


def max_rel_error(ga, gf):
    """Per-entry relative error with the denominator floored at 1e-5.

    Central differences at h=1e-5 carry ~1e-11 absolute roundoff, so a
    strictly relative comparison on entries near that floor would measure
    the oracle's noise rather than the gradient; the floor keeps the
    criterion exact for every entry of magnitude >= 1e-5 and demands
    |diff| <= 1e-10 below it.
    """
    va, vf = flatten(ga), flatten(gf)
    denom = np.maximum(np.maximum(np.abs(va), np.abs(vf)), 1e-5)
    return float((np.abs(va - vf) / denom).max())


class TestGrad:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        for trial in range(6):
            activation = "sigmoid" if trial % 2 == 0 else "relu"
            params = init_params(5, (7, 4), activation, seed=100 + trial)
            x = rng.normal(size=(8, 5))
            y = np.where(rng.random(8) < 0.5, 1, -1)
            a = (rng.random(8) < 0.5).astype(int)
            loss_fn = make_bce_loss_fn()
            ga = grad(params, x, y, a, loss_fn)
            gf = fd_gradient(params, x, y, a, loss_fn)
            assert max_rel_error(ga, gf) < 1e-5

    def test_duplicated_batch_same_gradient(self):
        rng = np.random.default_rng(0)
        params = init_params(3, (4,), seed=1)
        x = rng.normal(size=(5, 3))
        y = np.where(rng.random(5) < 0.5, 1, -1)
        a = np.zeros(5, dtype=int)
        loss_fn = make_bce_loss_fn()
        g1 = grad(params, x, y, a, loss_fn)
        g2 = grad(params, np.tile(x, (2, 1)), np.tile(y, 2), np.tile(a, 2), loss_fn)
        assert np.allclose(flatten(g1), flatten(g2), atol=1e-14)

    def test_zero_gradient_at_flat_spot(self):
        # p == 0.5 against a balanced duplicate pair: dlogit sums to zero
        params = linear_model([0.0, 0.0])
        x = np.array([[1.0, 2.0], [1.0, 2.0]])
        y = np.array([1, -1])
        a = np.zeros(2, dtype=int)
        g = grad(params, x, y, a, make_bce_loss_fn())
        assert np.allclose(flatten(g), 0.0, atol=1e-16)

    def test_empty_batch_rejected(self):
        params = linear_model([1.0])
        with pytest.raises(ValueError):
            grad(params, np.empty((0, 1)), np.empty(0), np.empty(0), make_bce_loss_fn())


class TestSgdStep:
    def test_zero_lr_is_identity(self):
        params = init_params(3, (4,), seed=2)
        g = Gradients(tuple(np.ones_like(w) for w in params.layer_weights),
                      tuple(np.ones_like(b) for b in params.layer_biases))
        out = sgd_step(params, g, 0.0)
        for w0, w1 in zip(params.layer_weights, out.layer_weights):
            assert np.array_equal(w0, w1)

    def test_scalar_arithmetic(self):
        params = linear_model([1.0])
        g = Gradients((np.array([[2.0]]),), (np.array([0.0]),))
        out = sgd_step(params, g, 0.1)
        assert out.layer_weights[0][0, 0] == pytest.approx(0.8, abs=1e-15)

    def test_input_untouched(self):
        params = linear_model([1.0])
        before = params.layer_weights[0].copy()
        g = Gradients((np.array([[2.0]]),), (np.array([1.0]),))
        sgd_step(params, g, 0.5)
        assert np.array_equal(params.layer_weights[0], before)

    def test_two_steps_equal_double_step(self):
        params = linear_model([1.0], b=0.5)
        g = Gradients((np.array([[2.0]]),), (np.array([3.0]),))
        twice = sgd_step(sgd_step(params, g, 0.1), g, 0.1)
        once = sgd_step(params, g, 0.2)
        assert np.allclose(twice.layer_weights[0], once.layer_weights[0], atol=1e-15)
        assert np.allclose(twice.layer_biases[0], once.layer_biases[0], atol=1e-15)


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        a = init_params(6, (5, 3), seed=9)
        b = init_params(6, (5, 3), seed=9)
        for wa, wb in zip(a.layer_weights, b.layer_weights):
            assert np.array_equal(wa, wb)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(eta=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            TrainConfig(steps=0)

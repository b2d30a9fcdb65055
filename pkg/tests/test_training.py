import math

import numpy as np
import pytest

from oracles import cp_loop, hand_step_toy, matricize_loop, model_neurons, nll_loop
from rankr_fnn.data import LabeledPatchSet, split_per_class, synth
from rankr_fnn.gradcheck import numeric_grad_factor, numeric_grad_output, random_case, relative_error
from rankr_fnn.model import ModelConfig, RankRModel, forward
from rankr_fnn.tensor_core import khatri_rao_chain
from rankr_fnn.training import (
    TrainConfig,
    TrainingDiverged,
    evaluate,
    grad_factor,
    grad_output,
    init_weights,
    nll,
    train,
)


def unit_model(v, classes=2):
    """x in (1, 1), one relu neuron with unit factors, so u = max(x, 0)."""
    cfg = ModelConfig((1, 1), rank=1, hidden=1, classes=classes, activation="relu")
    return RankRModel(cfg, (np.ones((1, 1, 1)), np.ones((1, 1, 1))), np.array([v], dtype=float))


@pytest.fixture(scope="module")
def synth_task():
    data = synth(42, 80, (5, 5, 8), 3)
    return split_per_class(data, 60, 42)


# --- objective


def test_nll_zero_at_perfect_fit():
    m = unit_model([1000.0, -1000.0])
    data = LabeledPatchSet(np.ones((3, 1, 1)), [0, 0, 0], 2)
    assert nll(m, data) == 0.0
    assert np.array_equal(grad_output(m, data), np.zeros((1, 2)))
    assert np.array_equal(grad_factor(m, data, 0, 0), np.zeros((1, 1)))


def test_nll_uniform_predictions():
    cfg = ModelConfig((2, 3), rank=2, hidden=3, classes=4)
    m = init_weights(cfg)
    m.output_weights[:] = 0
    data = LabeledPatchSet(np.random.default_rng(0).normal(size=(7, 2, 3)), [0, 1, 2, 3, 0, 1, 2], 4)
    assert nll(m, data) == pytest.approx(7 * math.log(4), rel=1e-14)


def test_nll_matches_loop_oracle():
    rng = np.random.default_rng(12)
    m = init_weights(ModelConfig((3, 2, 2), rank=2, hidden=4, classes=3, seed=5))
    m.output_weights[:] = rng.uniform(-2, 2, m.output_weights.shape)
    x = rng.normal(size=(5, 3, 2, 2))
    labels = [0, 2, 1, 1, 0]
    assert nll(m, LabeledPatchSet(x, labels, 3)) == pytest.approx(nll_loop(m, x, labels), rel=1e-12)


def test_nll_rejects_mismatched_data():
    m = init_weights(ModelConfig((2, 2), classes=2))
    with pytest.raises(ValueError):
        nll(m, LabeledPatchSet(np.zeros((1, 2, 3)), [0], 2))
    with pytest.raises(ValueError):
        nll(m, LabeledPatchSet(np.zeros((1, 2, 2)), [0], 3))


# --- gradients


def test_grad_output_hand_example():
    m = unit_model([0.0, 0.0])
    data = LabeledPatchSet(np.ones((1, 1, 1)), [0], 2)
    assert grad_output(m, data).tolist() == [[-0.5, 0.5]]


def test_grad_factor_finite_differences_example():
    rng = np.random.default_rng(0)
    m, data = random_case(rng, shape=(3, 3, 4), rank=2, hidden=2, classes=2, samples=4)
    for q in range(2):
        for d in range(3):
            err = relative_error(grad_factor(m, data, q, d), numeric_grad_factor(m, data, q, d))
            assert err <= 1e-4
    assert relative_error(grad_output(m, data), numeric_grad_output(m, data)) <= 1e-4


@pytest.mark.parametrize("activation", ["sigmoid", "tanh", "relu"])
def test_gradients_match_finite_differences(activation, backend):
    rng = np.random.default_rng(100)
    for _ in range(20):
        m, data = random_case(rng, activation=activation)
        for d in range(m.config.order):
            for q in range(m.config.hidden):
                assert relative_error(grad_factor(m, data, q, d), numeric_grad_factor(m, data, q, d)) <= 1e-4
        assert relative_error(grad_output(m, data), numeric_grad_output(m, data)) <= 1e-4


def test_grad_factor_matches_dense_backprop():
    # dL/dW (dense) = sum_i delta_iq X_i; the chain rule through the CP map gives
    # dL/dW_d = unfold_d(dL/dW) times the Khatri-Rao of the other factors
    rng = np.random.default_rng(4)
    m, data = random_case(rng, shape=(2, 3, 2), rank=2, hidden=2, classes=3, samples=3, activation="tanh")
    neurons = model_neurons(m)
    for q in range(2):
        dense_grad = np.zeros(m.config.input_shape)
        w = cp_loop(neurons[q])
        for x, y in zip(data.patches, data.labels):
            u = [math.tanh(float(np.sum(cp_loop(f) * x))) for f in neurons]
            logits = np.array(u) @ m.output_weights
            p = np.exp(logits - logits.max())
            p /= p.sum()
            t = np.eye(3)[y]
            delta = (1 - math.tanh(float(np.sum(w * x))) ** 2) * float((p - t) @ m.output_weights[q])
            dense_grad += delta * x
        for d in range(3):
            kr = khatri_rao_chain([neurons[q][k] for k in reversed(range(3)) if k != d])
            expected = matricize_loop(dense_grad, d) @ kr
            np.testing.assert_allclose(grad_factor(m, data, q, d), expected, rtol=1e-10, atol=1e-13)


def test_gradient_index_errors():
    m = init_weights(ModelConfig((2, 2), hidden=2))
    data = LabeledPatchSet(np.zeros((1, 2, 2)), [0], 2)
    with pytest.raises(ValueError):
        grad_factor(m, data, 2, 0)
    with pytest.raises(ValueError):
        grad_factor(m, data, 0, 2)


# --- training loop


def test_one_epoch_matches_hand_computation(backend):
    x = [[0.3, -1.2], [0.8, 0.5]]
    w1, w2, v = [0.4, -0.7], [0.9, 0.2], [0.6, -0.3]
    cfg = ModelConfig((2, 2), rank=1, hidden=1, classes=2)
    m = RankRModel(cfg, (np.array([w1]).reshape(1, 2, 1), np.array([w2]).reshape(1, 2, 1)), np.array([v]))
    data = LabeledPatchSet(np.array([x]), [1], 2)
    rec = train(m, data, TrainConfig(learning_rate=0.5, max_epochs=1, tol=0.0))
    e1, e2, ev = hand_step_toy(x, w1, w2, v, 1, 0.5)
    out = rec.model
    np.testing.assert_allclose(out.factors[0][0, :, 0], e1, rtol=0, atol=1e-10)
    np.testing.assert_allclose(out.factors[1][0, :, 0], e2, rtol=0, atol=1e-10)
    np.testing.assert_allclose(out.output_weights[0], ev, rtol=0, atol=1e-10)
    # the input model is not modified
    assert m.factors[0][0, :, 0].tolist() == w1


def test_zero_learning_rate_keeps_model(synth_task):
    tr, _ = synth_task
    m = init_weights(ModelConfig((5, 5, 8), rank=2, hidden=4, classes=3))
    rec = train(m, tr, TrainConfig(learning_rate=0.0, max_epochs=5, tol=0.0))
    assert rec.model == m
    assert len({e.train_nll for e in rec.epochs}) == 1


def test_init_is_seeded_and_bounded():
    cfg = ModelConfig((4, 6, 9), rank=3, hidden=5, classes=4, seed=17)
    a, b = init_weights(cfg), init_weights(cfg)
    assert a == b
    assert init_weights(ModelConfig((4, 6, 9), rank=3, hidden=5, classes=4, seed=18)) != a
    for p, f in zip(cfg.input_shape, a.factors):
        assert np.all(np.abs(f) <= math.sqrt(6 / (p + 3)))
    assert np.all(np.abs(a.output_weights) <= math.sqrt(6 / (5 + 4)))


def test_init_mean_is_centred():
    cfg = ModelConfig((100, 100, 100), rank=10, hidden=40, classes=2, seed=3)
    m = init_weights(cfg)
    # scale each stack to U(-1, 1), variance 1/3
    scaled = np.concatenate([f.ravel() / math.sqrt(6 / (p + 10)) for p, f in zip(cfg.input_shape, m.factors)])
    assert scaled.size >= 10**5
    assert abs(scaled.mean()) <= 3 * math.sqrt(1 / 3 / scaled.size)


def test_training_is_deterministic(synth_task, backend):
    tr, te = synth_task
    m = init_weights(ModelConfig((5, 5, 8), rank=2, hidden=8, classes=3, seed=1))
    cfg = TrainConfig(learning_rate=0.05, max_epochs=5, tol=0.0)
    a = train(m, tr, cfg, test_data=te)
    b = train(m, tr, cfg, test_data=te)
    assert a.epochs == b.epochs
    assert a.model == b.model


def test_learns_synthetic_task(synth_task):
    tr, te = synth_task
    m = init_weights(ModelConfig((5, 5, 8), rank=2, hidden=8, classes=3))
    rec = train(m, tr, TrainConfig(learning_rate=0.05, max_epochs=50, tol=0.0), test_data=te)
    assert max(e.train_acc for e in rec.epochs) >= 0.99
    assert rec.at(50).train_nll < rec.at(1).train_nll
    assert [e.epoch for e in rec.epochs] == list(range(1, 51))


def test_small_steps_do_not_increase_loss(synth_task):
    tr, _ = synth_task
    m = init_weights(ModelConfig((5, 5, 8), rank=2, hidden=8, classes=3))
    rec = train(m, tr, TrainConfig(learning_rate=1e-3, max_epochs=10, tol=0.0))
    losses = [nll(m, tr)] + [e.train_nll for e in rec.epochs]
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_alternating_and_joint_agree(synth_task):
    tr, _ = synth_task
    m = init_weights(ModelConfig((5, 5, 8), rank=2, hidden=8, classes=3))
    alt = train(m, tr, TrainConfig(learning_rate=0.05, max_epochs=200, tol=0.0, mode="alternating"))
    joint = train(m, tr, TrainConfig(learning_rate=0.05, max_epochs=200, tol=0.0, mode="joint"))
    assert abs(alt.final.train_acc - joint.final.train_acc) <= 0.02


def test_tolerance_stops_early(synth_task):
    tr, _ = synth_task
    m = init_weights(ModelConfig((5, 5, 8), rank=1, hidden=2, classes=3))
    rec = train(m, tr, TrainConfig(learning_rate=0.01, max_epochs=50, tol=1e9))
    assert len(rec.epochs) == 2
    assert rec.at(50) == rec.final


def test_observer_receives_each_epoch(synth_task):
    tr, te = synth_task
    seen = []
    m = init_weights(ModelConfig((5, 5, 8), rank=1, hidden=3, classes=3))
    rec = train(m, tr, TrainConfig(max_epochs=3, tol=0.0), observer=lambda *a: seen.append(a), test_data=te)
    assert [s[0] for s in seen] == [1, 2, 3]
    assert seen[-1] == (3, rec.final.train_nll, rec.final.train_acc, rec.final.test_acc)
    assert rec.final.test_acc == evaluate(rec.model, te)[1]


def test_divergence_is_reported(synth_task):
    tr, _ = synth_task
    m = init_weights(ModelConfig((5, 5, 8), rank=2, hidden=4, classes=3, activation="relu"))
    with pytest.raises(TrainingDiverged):
        train(m, tr, TrainConfig(learning_rate=1e200, max_epochs=20, tol=0.0))


def test_train_config_validation():
    for bad in (dict(learning_rate=-1), dict(max_epochs=0), dict(tol=-1), dict(mode="sgd"), dict(batch="mini")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_trained_model_predicts_consistently(synth_task):
    tr, te = synth_task
    m = init_weights(ModelConfig((5, 5, 8), rank=2, hidden=8, classes=3))
    rec = train(m, tr, TrainConfig(max_epochs=10, tol=0.0), test_data=te)
    acc = float(np.mean(np.argmax(forward(te.patches, rec.model), axis=1) == te.labels))
    assert acc == rec.final.test_acc

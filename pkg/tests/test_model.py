import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import forward_loop, model_neurons
from rankr_fnn.model import (
    ModelConfig,
    RankRModel,
    dense_forward,
    forward,
    from_neurons,
    hidden_preactivation,
    param_count,
    predict,
    z_excluding,
    zeros_like_config,
)
from rankr_fnn.tensor_core import CpFactors, cp_reconstruct, inner, matricize
from rankr_fnn.training import init_weights


def random_model(rng, shape, rank, hidden=3, classes=3, activation="sigmoid"):
    cfg = ModelConfig(shape, rank, hidden, classes, activation)
    facs = tuple(rng.uniform(-1, 1, (hidden, p, rank)) for p in shape)
    return RankRModel(cfg, facs, rng.uniform(-1, 1, (hidden, classes)))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig((5,))
    with pytest.raises(ValueError):
        ModelConfig((2, 2), rank=0)
    with pytest.raises(ValueError):
        ModelConfig((2, 2), hidden=0)
    with pytest.raises(ValueError):
        ModelConfig((2, 2), classes=1)
    with pytest.raises(ValueError):
        ModelConfig((2, 0))
    with pytest.raises(ValueError):
        ModelConfig((2, 2), activation="softplus")


def test_model_shape_validation():
    cfg = ModelConfig((2, 3), rank=2, hidden=2, classes=2)
    with pytest.raises(ValueError):
        RankRModel(cfg, (np.zeros((2, 2, 2)), np.zeros((2, 3, 1))), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        RankRModel(cfg, (np.zeros((2, 2, 2)), np.zeros((2, 3, 2))), np.zeros((3, 2)))


def test_z_all_ones_example():
    cfg = ModelConfig((2, 3), rank=1, hidden=1, classes=2)
    m = RankRModel(cfg, (np.ones((1, 2, 1)), np.ones((1, 3, 1))), np.zeros((1, 2)))
    z = z_excluding(np.ones((2, 3)), 0, 0, m)
    assert z.tolist() == [[3.0], [3.0]]


def test_z_definition_against_unfolding():
    rng = np.random.default_rng(1)
    m = random_model(rng, (3, 2, 4), 2)
    x = rng.normal(size=(3, 2, 4))
    for q in range(m.config.hidden):
        for d in range(3):
            # X_(d) times the Khatri-Rao of the other factors, built column by column
            others = [m.factors[k][q] for k in reversed(range(3)) if k != d]
            kr = np.stack([np.kron(others[0][:, r], others[1][:, r]) for r in range(2)], axis=1)
            np.testing.assert_allclose(z_excluding(x, q, d, m), matricize(x, d) @ kr, rtol=1e-12, atol=1e-14)


def test_trace_identity_every_mode():
    rng = np.random.default_rng(2)
    m = random_model(rng, (2, 3, 4), 3, hidden=2)
    x = rng.normal(size=(2, 3, 4))
    for q in range(2):
        dense = inner(cp_reconstruct(m.neuron(q)), x)
        for d in range(3):
            z = z_excluding(x, q, d, m)
            assert np.trace(m.factors[d][q].T @ z) == pytest.approx(dense, rel=1e-10)
            assert hidden_preactivation(x, q, d, m) == pytest.approx(dense, rel=1e-10)


def test_zero_weights_give_zero_preactivation():
    m = zeros_like_config(ModelConfig((2, 3, 2), rank=2, hidden=2, classes=3))
    x = np.random.default_rng(0).normal(size=(2, 3, 2))
    assert hidden_preactivation(x, 1, 2, m) == 0.0


def test_z_excluding_errors():
    rng = np.random.default_rng(0)
    m = random_model(rng, (2, 3), 1)
    with pytest.raises(ValueError):
        z_excluding(np.ones((3, 2)), 0, 0, m)
    with pytest.raises(ValueError):
        z_excluding(np.ones((2, 3)), 0, 2, m)
    with pytest.raises(ValueError):
        z_excluding(np.ones((2, 3)), 5, 0, m)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(1, 4), min_size=2, max_size=4).map(tuple),
    st.integers(1, 4),
    st.sampled_from(["sigmoid", "tanh", "relu"]),
    st.integers(0, 2**32 - 1),
)
def test_forward_matches_loop_oracle(shape, rank, activation, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, shape, rank, activation=activation)
    x = rng.uniform(-1, 1, shape)
    p = forward(x, m)
    np.testing.assert_allclose(p, forward_loop(x, model_neurons(m), m.output_weights, activation), rtol=1e-10)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all((p > 0) & (p < 1))


def test_forward_batch_and_modes_agree_with_dense():
    rng = np.random.default_rng(4)
    m = random_model(rng, (3, 2, 5), 2, hidden=4, classes=5)
    x = rng.normal(size=(6, 3, 2, 5))
    dense = dense_forward(x, m)
    for d in range(3):
        np.testing.assert_allclose(forward(x, m, mode=d), dense, rtol=1e-10)
    assert forward(x[0], m).shape == (5,)


def test_forward_uniform_when_output_weights_zero():
    rng = np.random.default_rng(0)
    m = random_model(rng, (2, 2), 2, classes=4)
    m.output_weights[:] = 0
    assert np.array_equal(forward(rng.normal(size=(2, 2)), m), np.full(4, 0.25))
    assert predict(rng.normal(size=(2, 2)), m) == 0


def test_forward_errors():
    rng = np.random.default_rng(0)
    m = random_model(rng, (2, 2), 1)
    with pytest.raises(ValueError):
        forward(np.ones((2, 3)), m)
    with pytest.raises(ValueError):
        forward(np.array([[1.0, np.nan], [0.0, 0.0]]), m)


def test_softmax_is_overflow_safe():
    cfg = ModelConfig((1, 1), rank=1, hidden=1, classes=2, activation="relu")
    m = RankRModel(cfg, (np.ones((1, 1, 1)), np.ones((1, 1, 1))), np.array([[1000.0, 1000.0]]))
    assert forward(np.array([[5.0]]), m).tolist() == [0.5, 0.5]


def test_predict_dominant_logit():
    # u = relu(s) = 1 when x = 1, so logits are the row of V
    cfg = ModelConfig((1, 1), rank=1, hidden=1, classes=3, activation="relu")
    m = RankRModel(cfg, (np.ones((1, 1, 1)), np.ones((1, 1, 1))), np.array([[0.0, 10.0, -5.0]]))
    assert predict(np.array([[1.0]]), m) == 1


def test_predict_matches_dense_argmax():
    rng = np.random.default_rng(8)
    for _ in range(200):
        m = random_model(rng, (2, 3), 2)
        x = rng.normal(size=(2, 3))
        assert predict(x, m) == int(np.argmax(dense_forward(x, m)))


def test_rank1_model_is_outer_product_network():
    rng = np.random.default_rng(6)
    m = random_model(rng, (3, 4, 2), 1, hidden=2)
    x = rng.normal(size=(3, 4, 2))
    for q in range(2):
        w = np.multiply.outer(np.multiply.outer(m.factors[0][q][:, 0], m.factors[1][q][:, 0]), m.factors[2][q][:, 0])
        assert hidden_preactivation(x, q, 0, m) == pytest.approx(float(np.sum(w * x)), rel=1e-12)


def test_param_counts():
    pavia = ModelConfig((5, 5, 103), rank=1, hidden=75, classes=9)
    assert param_count(pavia) == 9150
    assert param_count(pavia, "fcfnn") == 193_800
    assert param_count(ModelConfig((5, 5, 103), rank=2, hidden=75, classes=9)) == 17_625
    with pytest.raises(ValueError):
        param_count(pavia, "cnn")


def test_param_count_matches_stored_arrays():
    m = init_weights(ModelConfig((3, 4, 5), rank=3, hidden=7, classes=4))
    assert m.n_params == param_count(m.config) == 3 * 7 * 12 + 28


def test_from_neurons_and_equality():
    rng = np.random.default_rng(3)
    m = random_model(rng, (2, 3), 2)
    again = from_neurons(m.config, m.hidden_weights, m.output_weights)
    assert again == m
    assert isinstance(m.neuron(0), CpFactors)
    with pytest.raises(ValueError):
        from_neurons(m.config, m.hidden_weights[:1], m.output_weights)

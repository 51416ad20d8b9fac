import numpy as np
import pytest

from src.core.denoiser import MLPDenoiser, backward, build_denoiser, predict_eps, time_embedding
from src.utils.errors import ParameterError, ShapeError


def test_embedding_pairs_lie_on_unit_circle():
    emb = time_embedding(np.arange(1, 1001), 32)
    assert np.allclose(emb[:, 0::2] ** 2 + emb[:, 1::2] ** 2, 1.0, atol=1e-12)


def test_embedding_at_zero():
    emb = time_embedding(0, 8)
    assert np.array_equal(emb[0::2], np.zeros(4))
    assert np.array_equal(emb[1::2], np.ones(4))


def test_embedding_layout_and_frequencies():
    E, t = 6, 7
    emb = time_embedding(t, E)
    for i in range(E // 2):
        omega = 10000.0 ** (-2.0 * i / E)
        assert emb[2 * i] == pytest.approx(np.sin(t * omega), abs=1e-15)
        assert emb[2 * i + 1] == pytest.approx(np.cos(t * omega), abs=1e-15)


def test_distinct_timesteps_have_distinct_embeddings():
    emb = time_embedding(np.arange(1, 1001), 32)
    for i in range(len(emb) - 1):
        gaps = np.max(np.abs(emb[i + 1:] - emb[i]), axis=1)
        assert gaps.min() > 1e-6


@pytest.mark.parametrize("E", [7, 0, 1])
def test_embedding_rejects_bad_dimension(E):
    with pytest.raises(ParameterError):
        time_embedding(3, E)


def test_zero_weights_give_zero_output():
    model = MLPDenoiser(input_dim=3, hidden_dims=(16, 16), embed_dim=8, num_labels=2)
    model.params = {name: np.zeros_like(p) for name, p in model.params.items()}
    assert np.array_equal(model.predict_eps(np.ones(3), 5, 1), np.zeros(3))


def test_forward_is_deterministic_and_batched():
    model = build_denoiser(2, 3, hidden_dims=(16,), embed_dim=8, seed=4)
    x = np.array([[0.1, 0.2], [0.3, -0.4]])
    first = predict_eps(model, x, np.array([3, 9]), np.array([0, 2]))
    second = predict_eps(model, x, np.array([3, 9]), np.array([0, 2]))
    assert np.array_equal(first, second)
    assert np.allclose(first[1], model.predict_eps(x[1], 9, 2), rtol=1e-14)


def test_label_changes_output():
    model = MLPDenoiser(input_dim=2, hidden_dims=(16,), embed_dim=8, num_labels=2, seed=1)
    x = np.array([0.5, -0.5])
    assert not np.allclose(model.predict_eps(x, 10, 0), model.predict_eps(x, 10, 1))


def test_label_out_of_range():
    model = MLPDenoiser(input_dim=2, hidden_dims=(4,), embed_dim=4, num_labels=2)
    with pytest.raises(ParameterError):
        model.predict_eps(np.zeros(2), 1, 2)


def test_input_shape_is_checked():
    model = MLPDenoiser(input_dim=2, hidden_dims=(4,), embed_dim=4, num_labels=2)
    with pytest.raises(ShapeError):
        model.predict_eps(np.zeros(3), 1, 0)
    with pytest.raises(ShapeError):
        model.backward(np.zeros(2), 1, 0, np.zeros(3))


def test_init_is_seeded_and_float32_exact():
    a = MLPDenoiser(seed=8)
    b = MLPDenoiser(seed=8)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
        assert np.array_equal(a.params[name], a.params[name].astype(np.float32).astype(np.float64))
    bound = 1.0 / np.sqrt(a.layer_sizes[0])
    assert np.all(np.abs(a.params["layer0.weight"]) <= bound)
    assert a.params["label_embedding"].shape == (2, 32)


def test_zero_upstream_gives_zero_gradients():
    model = MLPDenoiser(input_dim=2, hidden_dims=(8,), embed_dim=4, num_labels=2, seed=2)
    grads = backward(model, np.ones((3, 2)), np.array([1, 2, 3]), np.array([0, 1, 1]), np.zeros((3, 2)))
    assert list(grads) == list(model.params)
    assert all(not np.any(g) for g in grads.values())


def test_single_linear_layer_gradient_is_outer_product():
    model = MLPDenoiser(input_dim=2, hidden_dims=(), embed_dim=4, num_labels=2, activation="identity", seed=5)
    x, t, g = np.array([0.3, -0.7]), 12, 1
    up = np.array([1.5, -0.25])
    grads = model.backward(x, t, g, up)
    inputs = np.concatenate([x, time_embedding(t, 4), model.params["label_embedding"][g]])
    assert np.allclose(grads["layer0.weight"], np.outer(inputs, up), rtol=1e-14)
    assert np.allclose(grads["layer0.bias"], up)


@pytest.mark.parametrize("activation", ["silu", "tanh", "identity"])
def test_gradients_match_finite_differences(activation):
    model = MLPDenoiser(input_dim=3, hidden_dims=(6, 5), embed_dim=4, num_labels=3, activation=activation, seed=17)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3))
    t = np.array([1, 40, 300, 999])
    g = np.array([0, 2, 2, 1])
    up = rng.standard_normal((4, 3))

    def objective():
        return float(np.sum(up * model.predict_eps(x, t, g)))

    grads = model.backward(x, t, g, up)
    h = 1e-4
    for name, param in model.params.items():
        for idx in np.ndindex(param.shape):
            original = param[idx]
            param[idx] = original + h
            plus = objective()
            param[idx] = original - h
            minus = objective()
            param[idx] = original
            numeric = (plus - minus) / (2 * h)
            analytic = grads[name][idx]
            assert abs(numeric - analytic) <= 1e-3 * max(abs(analytic), abs(numeric)) + 1e-8, (name, idx)


def test_unused_label_rows_get_zero_gradient():
    model = MLPDenoiser(input_dim=2, hidden_dims=(4,), embed_dim=4, num_labels=3, seed=1)
    grads = model.backward(np.ones((2, 2)), np.array([5, 6]), np.array([0, 0]), np.ones((2, 2)))
    assert not np.any(grads["label_embedding"][1:])
    assert np.any(grads["label_embedding"][0])


def test_invalid_construction():
    with pytest.raises(ParameterError):
        MLPDenoiser(embed_dim=5)
    with pytest.raises(ParameterError):
        MLPDenoiser(activation="relu")
    with pytest.raises(ParameterError):
        MLPDenoiser(num_labels=0)

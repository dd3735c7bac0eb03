import numpy as np
import pytest

from fiedlernet.core.errors import ArchitectureError, CheckpointFormatError, DimensionMismatchError
from fiedlernet.core.graph import build_graph, laplacian
from fiedlernet.core.spectral import fiedler_pair
from fiedlernet.services.network import (
    Batch,
    MlpModel,
    evaluate,
    forward,
    init_model,
    load_checkpoint,
    loss_and_grad,
    parameter_count,
    predict,
    save_checkpoint,
    sparsity,
)
from fiedlernet.services.regularization import PenaltyState, baseline_penalty, fiedler_penalty

PENALTIES = ("none", "fiedler", "fiedler_exact", "l1", "weight_decay")


def numeric_gradient(model, batch, layer, h=1e-5):
    grad = np.zeros_like(model.weights[layer])
    for index in np.ndindex(grad.shape):
        original = model.weights[layer][index]
        model.weights[layer][index] = original + h
        up, _ = loss_and_grad(model, batch)
        model.weights[layer][index] = original - h
        down, _ = loss_and_grad(model, batch)
        model.weights[layer][index] = original
        grad[index] = (up - down) / (2 * h)
    return grad


def objective(model, batch, penalty, state):
    """Loss plus penalty, with the gradients the trainer would apply"""
    loss, grads = loss_and_grad(model, batch)
    if penalty == "none":
        return loss, grads.weights, grads.biases
    if penalty in ("fiedler", "fiedler_exact"):
        result = fiedler_penalty(model, state)
    else:
        result = baseline_penalty(model, penalty, 0.01)
    weights = [g + p for g, p in zip(grads.weights, result.weight_grads)]
    biases = grads.biases
    if result.bias_grads is not None:
        biases = [g + p for g, p in zip(grads.biases, result.bias_grads)]
    return loss + result.value, weights, biases


def numeric_parameter_gradients(model, batch, penalty, state, h=1e-5):
    out = []
    for params in (model.weights, model.biases):
        grads = []
        for array in params:
            grad = np.zeros_like(array)
            for index in np.ndindex(array.shape):
                original = array[index]
                array[index] = original + h
                up = objective(model, batch, penalty, state)[0]
                array[index] = original - h
                down = objective(model, batch, penalty, state)[0]
                array[index] = original
                grad[index] = (up - down) / (2 * h)
            grads.append(grad)
        out.append(grads)
    return out


class TestForward:
    def test_identity_weights(self):
        model = MlpModel(layer_dims=(1, 1, 1), weights=[np.ones((1, 1)), np.ones((1, 1))])
        logits, _ = forward(model, np.array([[-5.0]]))
        assert logits[0, 0] == 0.0

    def test_positive_input_passes_through_relu(self):
        model = MlpModel(layer_dims=(1, 1, 1), weights=[np.ones((1, 1)), np.full((1, 1), 2.0)])
        logits, _ = forward(model, np.array([[3.0]]))
        assert logits[0, 0] == 6.0

    @pytest.mark.parametrize("scale", [0.5, 2.0, 3.0])
    def test_logits_homogeneous_in_final_layer(self, scale, rng):
        model = init_model([3, 4, 4, 2], activation="tanh", seed=5, biases=False)
        inputs = rng.normal(size=(7, 3))
        logits, _ = forward(model, inputs)
        scaled = model.copy()
        scaled.weights[-1] *= scale
        np.testing.assert_allclose(forward(scaled, inputs)[0], scale * logits, rtol=1e-12, atol=1e-14)

    def test_wrong_input_width(self, tiny_model):
        with pytest.raises(DimensionMismatchError):
            forward(tiny_model, np.zeros((2, 5)))

    def test_uniform_logits_loss(self):
        model = MlpModel(layer_dims=(2, 2), weights=[np.zeros((2, 2))])
        loss, _ = loss_and_grad(model, Batch(np.ones((3, 2)), np.array([0, 1, 0])))
        assert loss == pytest.approx(np.log(2.0))


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_backprop_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        model = init_model([4, 5, 3, 3], activation="tanh", seed=seed)
        for b in model.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        batch = Batch(rng.normal(size=(6, 4)), rng.integers(0, 3, size=6))
        _, grads = loss_and_grad(model, batch)
        for layer in range(model.num_layers):
            np.testing.assert_allclose(grads.weights[layer], numeric_gradient(model, batch, layer), rtol=1e-5, atol=1e-8)

    @pytest.mark.parametrize("penalty", PENALTIES)
    @pytest.mark.parametrize("seed", range(20))
    def test_objective_gradient_matches_finite_difference(self, seed, penalty):
        rng = np.random.default_rng(100 + seed)
        model = init_model([4, 5, 3, 3], activation="tanh", seed=seed)
        for b in model.biases:
            b[:] = rng.uniform(0.05, 0.3, size=b.shape) * rng.choice([-1.0, 1.0], size=b.shape)
        batch = Batch(rng.normal(size=(6, 4)), rng.integers(0, 3, size=6))
        state = PenaltyState(
            u=rng.normal(size=18),
            layer_dims=model.layer_dims,
            delta=0.1,
            mode="exact" if penalty == "fiedler_exact" else "variational",
            include_biases=True,
        )
        if penalty == "fiedler_exact" and fiedler_pair(laplacian(build_graph(model, include_biases=True))).gap < 1e-3:
            pytest.skip("Fiedler value too close to lambda3 for a finite-difference check")

        _, weight_grads, bias_grads = objective(model, batch, penalty, state)
        numeric_weights, numeric_biases = numeric_parameter_gradients(model, batch, penalty, state)
        for analytic, numeric in zip(weight_grads + bias_grads, numeric_weights + numeric_biases):
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_relu_backprop(self):
        rng = np.random.default_rng(11)
        model = init_model([3, 6, 2], activation="relu", seed=11)
        batch = Batch(rng.normal(size=(5, 3)), rng.integers(0, 2, size=5))
        _, grads = loss_and_grad(model, batch)
        np.testing.assert_allclose(grads.weights[0], numeric_gradient(model, batch, 0), rtol=1e-4, atol=1e-8)

    def test_batch_permutation_leaves_loss_unchanged(self, tiny_model, rng):
        inputs = rng.normal(size=(8, 3))
        labels = rng.integers(0, 2, size=8)
        order = rng.permutation(8)
        a, ga = loss_and_grad(tiny_model, Batch(inputs, labels))
        b, gb = loss_and_grad(tiny_model, Batch(inputs[order], labels[order]))
        assert a == pytest.approx(b, rel=1e-12)
        np.testing.assert_allclose(ga.weights[0], gb.weights[0], atol=1e-14)

    def test_label_out_of_range(self, tiny_model):
        with pytest.raises(DimensionMismatchError):
            loss_and_grad(tiny_model, Batch(np.zeros((1, 3)), np.array([5])))


class TestModel:
    def test_parameter_count(self):
        assert parameter_count([784, 500, 500, 500, 10], biases=False) == 897000
        assert parameter_count([784, 500, 500, 500, 10]) == 897000 + 1510

    def test_init_is_seeded(self):
        a, b = init_model([5, 4, 2], seed=3), init_model([5, 4, 2], seed=3)
        for Wa, Wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(Wa, Wb)

    def test_init_scale(self):
        model = init_model([10, 30], seed=0)
        assert np.abs(model.weights[0]).max() <= np.sqrt(6.0 / 40)

    def test_bad_architecture(self):
        with pytest.raises(ArchitectureError):
            init_model([3])
        with pytest.raises(DimensionMismatchError):
            MlpModel(layer_dims=(2, 2), weights=[np.zeros((3, 2))])

    def test_evaluate_and_predict(self):
        model = MlpModel(layer_dims=(2, 2), weights=[np.eye(2)])
        inputs = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
        labels = np.array([0, 1, 1])
        np.testing.assert_array_equal(predict(model, inputs), [0, 1, 0])
        loss, acc = evaluate(model, inputs, labels)
        assert acc == pytest.approx(2 / 3)
        assert loss > 0

    def test_sparsity(self):
        model = MlpModel(layer_dims=(2, 2), weights=[np.array([[0.0, 1.0], [1e-9, 2.0]])])
        assert sparsity(model) == 0.5


class TestCheckpoint:
    def test_round_trip(self, tiny_model, tmp_path):
        path = save_checkpoint(tiny_model, tmp_path / "model.npz")
        restored = load_checkpoint(path)
        assert restored.layer_dims == tiny_model.layer_dims
        assert restored.activation == "tanh"
        for a, b in zip(restored.weights, tiny_model.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(restored.biases, tiny_model.biases):
            np.testing.assert_array_equal(a, b)

    def test_archive_layout(self, tiny_model, tmp_path):
        path = save_checkpoint(tiny_model, tmp_path / "model.npz")
        layers = len(tiny_model.layer_dims) - 1
        with np.load(path, allow_pickle=False) as data:
            expected = {"format_version", "layer_dims", "activation", "has_biases"}
            expected |= {f"W{l}" for l in range(layers)} | {f"b{l}" for l in range(layers)}
            assert set(data.files) == expected
            assert int(data["format_version"]) == 1
            assert data["layer_dims"].dtype == np.int64
            assert data["W0"].shape == (tiny_model.layer_dims[1], tiny_model.layer_dims[0])

    def test_no_bias_arrays_without_biases(self, tmp_path):
        model = MlpModel(layer_dims=(2, 1), weights=[np.array([[1.0, -2.0]])])
        with np.load(save_checkpoint(model, tmp_path / "model.npz"), allow_pickle=False) as data:
            assert not bool(data["has_biases"])
            assert "b0" not in data.files
        assert load_checkpoint(tmp_path / "model.npz").biases is None

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "old.npz"
        np.savez(path, format_version=np.array(99), layer_dims=np.array([1, 1]))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "partial.npz"
        np.savez(path, format_version=np.array(1), layer_dims=np.array([1, 1]), activation=np.array("relu"))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

"""Tests for the from-scratch network core: forward, losses, optimizers, init and persistence."""

import numpy as np
import pytest

from purilab.backend.error_handling import (
    DivergenceError,
    EmptyDataError,
    LabelRangeError,
    LayerSpecError,
    ModelFormatError,
    NonFiniteError,
    ShapeError,
)
from purilab.nn_core import (
    Batch,
    LayerSpec,
    backward,
    forward,
    init_branch_network,
    init_network,
    load_network,
    loss_gradient,
    loss_value,
    make_optimizer,
    minibatches,
    mlp_specs,
    network_from_dict,
    network_to_dict,
    optimizer_step,
    save_network,
    train_network,
)


def _single_layer(in_dim, out_dim, activation="identity"):
    return init_network([LayerSpec(in_dim, out_dim, activation)], seed=0)


class TestForward:
    """Test forward passes on hand-set weights."""

    def test_identity_layer(self):
        """An identity weight with zero bias returns its input."""
        net = _single_layer(2, 2)
        net.layers[0].weight = np.eye(2)
        net.layers[0].bias = np.zeros(2)
        np.testing.assert_array_equal(forward(net, np.array([[1.0, 2.0]])), [[1.0, 2.0]])

    def test_softmax_on_equal_logits(self):
        """Zero logits give a uniform distribution."""
        net = _single_layer(3, 2, "softmax")
        net.layers[0].weight = np.zeros((3, 2))
        np.testing.assert_allclose(forward(net, np.ones((1, 3))), [[0.5, 0.5]])

    def test_two_layer_relu_by_hand(self):
        """A hand-set ReLU network matches the hand-evaluated matrix products."""
        net = init_network(mlp_specs([2, 2, 1], "relu", "identity"), seed=0)
        net.layers[0].weight = np.array([[1.0, -1.0], [2.0, 0.0]])
        net.layers[0].bias = np.array([0.0, 1.0])
        net.layers[1].weight = np.array([[1.0], [2.0]])
        net.layers[1].bias = np.array([0.5])
        # hidden = relu([3, 0]) -> output 3 * 1 + 0 * 2 + 0.5
        np.testing.assert_allclose(forward(net, np.array([[1.0, 1.0]])), [[3.5]])

    def test_wrong_width_raises(self, small_net):
        """Inputs with the wrong number of columns are rejected."""
        with pytest.raises(ShapeError, match="expects 5 input columns"):
            forward(small_net, np.zeros((2, 4)))

    def test_vector_input_raises(self, small_net):
        """Forward needs a matrix."""
        with pytest.raises(ShapeError, match="2-D"):
            forward(small_net, np.zeros(5))

    def test_non_finite_raises(self):
        """Infinite activations are reported."""
        net = _single_layer(1, 1)
        net.layers[0].weight = np.array([[np.inf]])
        with pytest.raises(NonFiniteError):
            forward(net, np.ones((1, 1)))

    def test_softmax_rows_are_simplex(self, small_net, rng):
        """Softmax outputs are non-negative and sum to one."""
        out = forward(small_net, rng.normal(size=(6, 5)))
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_eval_mode_does_not_touch_running_stats(self, rng):
        """Eval mode uses, but never updates, batch-norm running statistics."""
        net = init_network(mlp_specs([4, 6, 3], "relu", "softmax", batch_norm=True), seed=2)
        before = net.layers[0].running_mean.copy()
        forward(net, rng.normal(size=(8, 4)), mode="eval")
        np.testing.assert_array_equal(net.layers[0].running_mean, before)

    def test_train_mode_updates_running_stats(self, rng):
        """Train mode moves the running statistics toward the batch statistics."""
        net = init_network(mlp_specs([4, 6, 3], "relu", "softmax", batch_norm=True), seed=2)
        forward(net, rng.normal(size=(8, 4)) + 3.0, mode="train")
        assert not np.allclose(net.layers[0].running_mean, 0.0)

    def test_train_mode_without_update(self, rng):
        """``update_running=False`` uses batch statistics but keeps the running ones."""
        net = init_network(mlp_specs([4, 6, 3], "relu", "softmax", batch_norm=True), seed=2)
        forward(net, rng.normal(size=(8, 4)) + 3.0, mode="train", update_running=False)
        np.testing.assert_array_equal(net.layers[0].running_mean, np.zeros(6))

    def test_unknown_mode_raises(self, small_net):
        """Only train and eval modes exist."""
        with pytest.raises(ValueError, match="mode"):
            forward(small_net, np.zeros((1, 5)), mode="predict")

    def test_branch_network_output(self, rng):
        """A branch network maps ``[confidence | label]`` to one probability per row."""
        net = init_branch_network([3, 8, 4], [3, 4], [8, 4, 1], seed=1)
        out = forward(net, rng.random((5, 6)))
        assert out.shape == (5, 1)
        assert np.all((out > 0) & (out < 1))


class TestBackward:
    """Test closed-form gradient cases."""

    def test_gradients_zero_at_optimum(self):
        """A zero-weight linear layer whose target equals its bias has zero gradients."""
        net = _single_layer(3, 2)
        net.layers[0].weight = np.zeros((3, 2))
        net.layers[0].bias = np.array([0.3, -0.7])
        batch = Batch(np.ones((4, 3)), np.tile([0.3, -0.7], (4, 1)))
        for grad in backward(net, batch, "mse"):
            np.testing.assert_array_equal(grad, 0.0)

    def test_softmax_cross_entropy_bias_gradient(self, rng):
        """The bias gradient of softmax + cross-entropy is the mean of ``softmax - one_hot``."""
        net = _single_layer(4, 3, "softmax")
        x = rng.normal(size=(6, 4))
        labels = np.array([0, 1, 2, 2, 1, 0])
        probs = forward(net, x)
        expected = (probs - np.eye(3)[labels]).sum(axis=0) / 6
        grads = backward(net, Batch(x, labels, 3), "cross_entropy")
        np.testing.assert_allclose(grads[1], expected, atol=1e-10)

    def test_gradient_shapes_match_parameters(self, rng):
        """Every gradient has its parameter's shape, batch-norm scales included."""
        net = init_network(mlp_specs([4, 6, 3], "relu", "softmax", batch_norm=True), seed=2)
        grads = backward(net, Batch(rng.normal(size=(5, 4)), np.array([0, 1, 2, 0, 1])), "cross_entropy")
        assert [g.shape for g in grads] == [p.shape for p in net.parameters()]


class TestBatch:
    """Test the Batch container's checks."""

    def test_empty_batch(self):
        """A batch without rows is rejected."""
        with pytest.raises(EmptyDataError):
            Batch(np.zeros((0, 3)), np.zeros(0))

    def test_row_mismatch(self):
        """Inputs and targets must have the same number of rows."""
        with pytest.raises(ShapeError, match="3 inputs but 2 targets"):
            Batch(np.zeros((3, 2)), np.zeros(2))

    def test_label_out_of_range(self):
        """Labels must be below ``num_classes``."""
        with pytest.raises(LabelRangeError):
            Batch(np.zeros((2, 2)), np.array([0, 3]), num_classes=3)


class TestLosses:
    """Test loss values on analytic cases."""

    def test_mse_zero(self, simplex_rows):
        """MSE of identical matrices is zero."""
        assert loss_value("mse", simplex_rows, simplex_rows) == 0.0

    def test_mse_averages_over_all_entries(self):
        """MSE divides by samples times dimensions."""
        assert loss_value("mse", np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])) == pytest.approx(0.5)

    def test_cross_entropy_of_exact_prediction(self):
        """A one-hot prediction on its own label costs nothing."""
        assert loss_value("cross_entropy", np.eye(3), np.array([0, 1, 2])) == pytest.approx(0.0, abs=1e-12)

    def test_cross_entropy_is_clamped(self):
        """A zero probability on the true label gives the clamped, finite loss."""
        value = loss_value("cross_entropy", np.array([[1.0, 0.0]]), np.array([1]))
        assert value == pytest.approx(-np.log(1e-12))

    def test_clamped_cross_entropy_has_no_gradient(self):
        """Where the loss is flat at the clamp its gradient is zero."""
        grad = loss_gradient("cross_entropy", np.array([[1.0, 0.0], [0.5, 0.5]]), np.array([1, 1]))
        np.testing.assert_array_equal(grad[0], [0.0, 0.0])
        assert grad[1, 1] == pytest.approx(-1.0)

    def test_clamped_bce_has_no_gradient(self):
        """Saturated binary predictions get no gradient; interior ones do."""
        grad = loss_gradient("binary_cross_entropy", np.array([[0.0], [1.0], [0.5]]), np.array([[1.0], [0.0], [1.0]]))
        np.testing.assert_array_equal(grad[:2], [[0.0], [0.0]])
        assert grad[2, 0] == pytest.approx(-2.0 / 3.0)

    @pytest.mark.parametrize("target", [0.0, 1.0])
    def test_bce_at_one_half(self, target):
        """Binary cross-entropy of 0.5 is ln 2 whatever the target."""
        assert loss_value("binary_cross_entropy", np.array([[0.5]]), np.array([[target]])) == pytest.approx(
            np.log(2)
        )

    def test_empty_batch(self):
        """The loss of an empty batch is undefined."""
        with pytest.raises(EmptyDataError):
            loss_value("mse", np.zeros((0, 2)), np.zeros((0, 2)))

    def test_unknown_loss(self):
        """Unknown loss kinds are rejected."""
        with pytest.raises(ValueError, match="unknown loss"):
            loss_value("hinge", np.zeros((1, 2)), np.zeros((1, 2)))

    def test_label_range(self):
        """Cross-entropy labels must index a column."""
        with pytest.raises(LabelRangeError):
            loss_value("cross_entropy", np.full((1, 2), 0.5), np.array([2]))


class TestOptimizers:
    """Test SGD and Adam updates."""

    def test_sgd_unit_step(self):
        """SGD with learning rate 1 subtracts the gradient."""
        net = _single_layer(1, 1)
        net.layers[0].weight = np.array([[0.5]])
        state = make_optimizer("sgd", net, 1.0)
        optimizer_step(state, net, [np.array([[0.2]]), np.array([0.0])])
        assert net.layers[0].weight[0, 0] == pytest.approx(0.3)

    def test_adam_first_step_magnitude(self):
        """The bias-corrected first Adam step moves every parameter by about the learning rate."""
        net = _single_layer(2, 2)
        before = [p.copy() for p in net.parameters()]
        state = make_optimizer("adam", net, 0.01)
        optimizer_step(state, net, [np.ones_like(p) for p in net.parameters()])
        for old, new in zip(before, net.parameters()):
            np.testing.assert_allclose(old - new, 0.01, rtol=1e-5)

    @pytest.mark.parametrize("kind", ["sgd", "adam"])
    def test_zero_gradients_leave_parameters(self, kind, small_net):
        """Zero gradients change nothing."""
        before = [p.copy() for p in small_net.parameters()]
        state = make_optimizer(kind, small_net, 0.1)
        optimizer_step(state, small_net, [np.zeros_like(p) for p in small_net.parameters()])
        for old, new in zip(before, small_net.parameters()):
            np.testing.assert_array_equal(old, new)

    def test_shape_mismatch(self, small_net):
        """Gradients that do not line up with the parameters are rejected."""
        state = make_optimizer("adam", small_net, 0.1)
        with pytest.raises(ShapeError):
            optimizer_step(state, small_net, [np.zeros((2, 2))])

    def test_unknown_optimizer(self, small_net):
        """Only SGD and Adam are available."""
        with pytest.raises(ValueError, match="unknown optimizer"):
            make_optimizer("rmsprop", small_net, 0.1)

    def test_moments_match_parameter_shapes(self, small_net):
        """Adam moments mirror the parameters."""
        state = make_optimizer("adam", small_net, 0.1)
        assert [m.shape for m in state.first_moments] == [p.shape for p in small_net.parameters()]


class TestInit:
    """Test deterministic initialization and spec validation."""

    def test_same_seed_identical(self):
        """Two networks from one seed are bit-identical."""
        a = init_network(mlp_specs([6, 5, 3]), seed=9)
        b = init_network(mlp_specs([6, 5, 3]), seed=9)
        for p, q in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_different_seeds_differ(self):
        """Different seeds give different weights."""
        a = init_network(mlp_specs([6, 5, 3]), seed=1)
        b = init_network(mlp_specs([6, 5, 3]), seed=2)
        assert not np.array_equal(a.layers[0].weight, b.layers[0].weight)

    @pytest.mark.parametrize(
        "activation, expected_var", [("relu", 2.0 / 512), ("tanh", 2.0 / 1024)], ids=["he", "xavier"]
    )
    def test_weight_variance(self, activation, expected_var):
        """A 512x512 layer's empirical weight variance is within 20% of its scheme's variance."""
        net = init_network([LayerSpec(512, 512, activation)], seed=0)
        assert net.layers[0].weight.var() == pytest.approx(expected_var, rel=0.2)

    def test_bias_and_batch_norm_defaults(self):
        """Biases start at zero, batch-norm scales at one."""
        net = init_network(mlp_specs([4, 6, 3], "relu", "softmax", batch_norm=True), seed=0)
        np.testing.assert_array_equal(net.layers[0].bias, 0.0)
        np.testing.assert_array_equal(net.layers[0].gamma, 1.0)
        np.testing.assert_array_equal(net.layers[0].running_var, 1.0)

    def test_output_layer_never_batch_normed(self):
        """``mlp_specs`` only normalizes hidden layers."""
        specs = mlp_specs([4, 6, 5, 3], batch_norm=True)
        assert [s.batch_norm for s in specs] == [True, True, False]

    def test_softmax_only_last(self):
        """Softmax in a hidden layer is rejected."""
        with pytest.raises(LayerSpecError, match="softmax"):
            init_network([LayerSpec(3, 4, "softmax"), LayerSpec(4, 2, "identity")], seed=0)

    def test_layers_must_chain(self):
        """Adjacent widths must agree."""
        with pytest.raises(LayerSpecError, match="outputs 4"):
            init_network([LayerSpec(3, 4), LayerSpec(5, 2)], seed=0)

    def test_unknown_activation(self):
        """Activation names are checked."""
        with pytest.raises(LayerSpecError, match="unknown activation"):
            init_network([LayerSpec(3, 4, "gelu")], seed=0)

    def test_mlp_specs_needs_two_widths(self):
        """A network needs an input and an output width."""
        with pytest.raises(LayerSpecError):
            mlp_specs([4])

    def test_branch_widths_must_meet(self):
        """The combiner's input must equal the branch outputs combined."""
        with pytest.raises(LayerSpecError, match="combiner"):
            init_branch_network([3, 4], [3, 4], [9, 1], seed=0)


class TestTraining:
    """Test the mini-batch training loop."""

    def test_minibatches_cover_once(self):
        """Every index appears exactly once per epoch."""
        batches = list(minibatches(10, 4, np.random.default_rng(0)))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches)) == list(range(10))

    def test_loss_decreases(self, rng):
        """Training on a separable toy problem lowers the loss."""
        x = rng.normal(size=(64, 2))
        y = (x[:, 0] > 0).astype(np.int64)
        net = init_network(mlp_specs([2, 8, 2], "tanh", "softmax"), seed=0)
        trace = train_network(
            net, x, y, "cross_entropy", epochs=30, batch_size=16, learning_rate=0.05, rng=np.random.default_rng(0)
        )
        assert len(trace) == 30
        assert trace[-1] < trace[0]

    def test_divergence_reports_epoch(self):
        """Non-finite activations stop training with the epoch attached."""
        net = init_network(mlp_specs([2, 3, 2], "tanh", "softmax"), seed=0)
        x = np.array([[np.nan, 0.0], [1.0, 1.0]])
        with pytest.raises(DivergenceError, match="epoch 0") as err:
            train_network(
                net, x, np.array([0, 1]), "cross_entropy", epochs=2, batch_size=2, learning_rate=0.1,
                rng=np.random.default_rng(0),
            )
        assert err.value.epoch == 0

    def test_on_epoch_callback(self, rng):
        """The callback sees every epoch index and its mean loss."""
        seen = []
        net = init_network(mlp_specs([2, 2], "identity", "softmax"), seed=0)
        train_network(
            net, rng.normal(size=(8, 2)), np.zeros(8, dtype=np.int64), "cross_entropy", epochs=3, batch_size=4,
            learning_rate=0.1, rng=rng, on_epoch=lambda epoch, loss: seen.append((epoch, loss)),
        )
        assert [epoch for epoch, _ in seen] == [0, 1, 2]

    def test_weight_decay_shrinks_weights(self):
        """With zero data gradient, L2 decay pulls weights toward zero."""
        net = _single_layer(2, 2)
        net.layers[0].weight = np.full((2, 2), 1.0)
        net.layers[0].bias = np.zeros(2)
        x = np.zeros((4, 2))
        train_network(
            net, x, np.zeros((4, 2)), "mse", epochs=5, batch_size=4, learning_rate=0.1,
            rng=np.random.default_rng(0), optimizer="sgd", weight_decay=0.5,
        )
        assert np.all(net.layers[0].weight < 1.0)


class TestPersistence:
    """Test the JSON network format."""

    def test_save_load_reproduces_outputs(self, tmp_path, rng):
        """A saved and reloaded network gives bit-identical eval outputs."""
        net = init_network(mlp_specs([4, 6, 3], "relu", "softmax", batch_norm=True), seed=5)
        forward(net, rng.normal(size=(16, 4)), mode="train")
        x = rng.normal(size=(3, 4))
        loaded = load_network(save_network(net, tmp_path / "net.json"))
        np.testing.assert_array_equal(forward(net, x), forward(loaded, x))

    def test_branch_round_trip(self, rng):
        """Branch networks keep their structure through the document format."""
        net = init_branch_network([3, 8, 4], [3, 4], [8, 4, 1], seed=1)
        x = rng.random((4, 6))
        np.testing.assert_array_equal(forward(net, x), forward(network_from_dict(network_to_dict(net)), x))

    def test_copy_is_independent(self, small_net):
        """Copies do not share arrays with the original."""
        clone = small_net.copy()
        clone.layers[0].weight += 1.0
        assert not np.array_equal(clone.layers[0].weight, small_net.layers[0].weight)

    def test_wrong_format_tag(self, small_net):
        """Foreign documents are rejected."""
        document = network_to_dict(small_net) | {"format": "something.else"}
        with pytest.raises(ModelFormatError, match="not a purilab.network"):
            network_from_dict(document)

    def test_unknown_version(self, small_net):
        """Future versions are rejected."""
        with pytest.raises(ModelFormatError, match="unsupported version"):
            network_from_dict(network_to_dict(small_net) | {"version": 99})

    def test_shape_mismatch_in_document(self, small_net):
        """Parameter shapes must agree with the layer spec."""
        document = network_to_dict(small_net)
        document["layers"][0]["bias"] = [0.0]
        with pytest.raises(ModelFormatError):
            network_from_dict(document)

    def test_invalid_json(self, tmp_path):
        """A file that is not JSON is a format error."""
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ModelFormatError, match="not valid JSON"):
            load_network(path)

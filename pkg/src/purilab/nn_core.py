"""
purilab - dense network engine.

Forward and backward passes, losses, optimizers, deterministic initialization and persistence for the
small feed-forward networks used as target classifier, purifier, adversaries, shadow and attack models.
"""

from __future__ import annotations

__all__ = [
    "LayerSpec",
    "DenseLayer",
    "Network",
    "BranchNetwork",
    "Batch",
    "OptimizerState",
    "mlp_specs",
    "init_network",
    "init_branch_network",
    "forward",
    "forward_with_cache",
    "backward",
    "backward_from_output",
    "loss_value",
    "loss_gradient",
    "loss_and_gradients",
    "make_optimizer",
    "optimizer_step",
    "minibatches",
    "train_network",
    "network_to_dict",
    "network_from_dict",
    "save_network",
    "load_network",
]

import json
import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import numpy as np

from .backend.CONSTANTS import (
    ACTIVATIONS,
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    BN_EPS,
    BN_MOMENTUM,
    CE_CLAMP,
    FORMAT_VERSION,
    LOSSES,
    NETWORK_FORMAT,
    OPTIMIZERS,
)
from .backend.error_handling import (
    DivergenceError,
    EmptyDataError,
    LabelRangeError,
    LayerSpecError,
    ModelFormatError,
    NonFiniteError,
    ShapeError,
)

logger = logging.getLogger(__name__)

Gradients = list[np.ndarray]


@dataclass(frozen=True)
class LayerSpec:
    """Shape and activation of one dense layer."""

    input_dim: int
    output_dim: int
    activation: str = "relu"
    batch_norm: bool = False

    def get_dict(self) -> dict[str, Any]:
        """Get the layer spec as a plain dictionary."""
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "activation": self.activation,
            "batch_norm": self.batch_norm,
        }


@dataclass
class DenseLayer:
    """A dense layer's parameters; batch-norm arrays are ``None`` when disabled."""

    spec: LayerSpec
    weight: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: weight, bias, then gamma and beta if present."""
        params = [self.weight, self.bias]
        if self.spec.batch_norm:
            params += [self.gamma, self.beta]  # type: ignore[list-item]
        return params


@dataclass
class Network:
    """A chain of dense layers."""

    layers: list[DenseLayer]

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.output_dim

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays, layer by layer."""
        return [p for layer in self.layers for p in layer.parameters()]

    def copy(self) -> "Network":
        """Deep copy, running statistics included."""
        return network_from_dict(network_to_dict(self))

    def __call__(self, inputs: np.ndarray, mode: str = "eval") -> np.ndarray:
        return forward(self, inputs, mode)


@dataclass
class BranchNetwork:
    """
    Two input branches whose outputs are concatenated and fed to a combiner.

    The input matrix holds the first branch's columns ``[:split]`` followed by the
    second branch's columns ``[split:]``; here a confidence vector and a one-hot label.
    """

    confidence_branch: Network
    label_branch: Network
    combiner: Network

    @property
    def split(self) -> int:
        return self.confidence_branch.input_dim

    @property
    def input_dim(self) -> int:
        return self.confidence_branch.input_dim + self.label_branch.input_dim

    @property
    def output_dim(self) -> int:
        return self.combiner.output_dim

    def parameters(self) -> list[np.ndarray]:
        """Confidence-branch, label-branch, then combiner arrays."""
        return self.confidence_branch.parameters() + self.label_branch.parameters() + self.combiner.parameters()

    def copy(self) -> "BranchNetwork":
        """Deep copy."""
        return network_from_dict(network_to_dict(self))  # type: ignore[return-value]

    def __call__(self, inputs: np.ndarray, mode: str = "eval") -> np.ndarray:
        return forward(self, inputs, mode)


Model = Union[Network, BranchNetwork]


@dataclass
class Batch:
    """
    Inputs with either integer labels (cross-entropy) or real targets.

    Raises
    ------
    EmptyDataError
        If the batch has no rows.
    ShapeError
        If inputs and targets disagree on the number of rows.
    """

    inputs: np.ndarray
    targets: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets)
        if self.inputs.shape[0] == 0:
            raise EmptyDataError("A batch needs at least one sample.")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ShapeError(f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets")
        if self.num_classes is not None and self.targets.ndim == 1:
            if self.targets.min() < 0 or self.targets.max() >= self.num_classes:
                raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")


@dataclass
class OptimizerState:
    """Optimizer hyperparameters plus per-parameter Adam moments and the step counter."""

    kind: str = "adam"
    learning_rate: float = 0.001
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)


# =============================================================================
# Construction
# =============================================================================


def mlp_specs(
    dims: Sequence[int], hidden_activation: str = "relu", output_activation: str = "identity", batch_norm: bool = False
) -> list[LayerSpec]:
    """
    Build layer specs for a multi-layer perceptron of widths ``dims``.

    Parameters
    ----------
    dims :
        Layer widths including input and output, e.g. ``[20, 10, 4, 10, 20]``.
    hidden_activation :
        Activation of every hidden layer.
    output_activation :
        Activation of the last layer.
    batch_norm :
        Whether hidden layers use batch normalization; the output layer never does.

    Returns
    -------
    list[LayerSpec]
        One spec per weight matrix.
    """
    if len(dims) < 2:
        raise LayerSpecError(f"need at least an input and an output width, got {list(dims)}")
    last = len(dims) - 2
    return [
        LayerSpec(
            input_dim=int(dims[i]),
            output_dim=int(dims[i + 1]),
            activation=output_activation if i == last else hidden_activation,
            batch_norm=batch_norm and i != last,
        )
        for i in range(len(dims) - 1)
    ]


def _validate_specs(specs: Sequence[LayerSpec]) -> None:
    if len(specs) == 0:
        raise LayerSpecError("a network needs at least one layer")
    for i, spec in enumerate(specs):
        if spec.activation not in ACTIVATIONS:
            raise LayerSpecError(f"unknown activation '{spec.activation}'", f"layers[{i}].activation")
        if spec.input_dim < 1 or spec.output_dim < 1:
            raise LayerSpecError("dimensions must be at least 1", f"layers[{i}]")
        if spec.activation == "softmax" and i != len(specs) - 1:
            raise LayerSpecError("softmax is only allowed on the final layer", f"layers[{i}].activation")
        if i > 0 and specs[i - 1].output_dim != spec.input_dim:
            raise LayerSpecError(
                f"layer {i - 1} outputs {specs[i - 1].output_dim} but layer {i} expects {spec.input_dim}",
                f"layers[{i}].input_dim",
            )


def init_network(specs: Sequence[LayerSpec], seed: int | np.random.Generator) -> Network:
    """
    Create a network with deterministic initial weights.

    ReLU layers use He-uniform initialization, all other activations Xavier-uniform.
    Biases start at zero, batch-norm scales at one and running variances at one.

    Parameters
    ----------
    specs :
        Chained layer specs.
    seed :
        Integer seed or an existing generator.

    Returns
    -------
    Network
        The initialized network.

    Raises
    ------
    LayerSpecError
        If the specs do not chain or use softmax before the last layer.
    """
    _validate_specs(specs)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    layers = []
    for spec in specs:
        fan_in, fan_out = spec.input_dim, spec.output_dim
        if spec.activation == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        layer = DenseLayer(
            spec=spec,
            weight=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
            bias=np.zeros(fan_out),
        )
        if spec.batch_norm:
            layer.gamma = np.ones(fan_out)
            layer.beta = np.zeros(fan_out)
            layer.running_mean = np.zeros(fan_out)
            layer.running_var = np.ones(fan_out)
        layers.append(layer)
    return Network(layers)


def init_branch_network(
    confidence_dims: Sequence[int],
    label_dims: Sequence[int],
    combiner_dims: Sequence[int],
    seed: int | np.random.Generator,
) -> BranchNetwork:
    """
    Create a two-branch network with a sigmoid combiner output.

    Parameters
    ----------
    confidence_dims :
        Widths of the confidence branch, e.g. ``[k, 1024, 512, 64]``.
    label_dims :
        Widths of the label branch, e.g. ``[k, 512, 64]``.
    combiner_dims :
        Widths of the combiner; its input must equal the two branch outputs combined.
    seed :
        Integer seed or an existing generator.

    Returns
    -------
    BranchNetwork
        The initialized network.
    """
    if combiner_dims[0] != confidence_dims[-1] + label_dims[-1]:
        raise LayerSpecError(
            f"combiner expects {combiner_dims[0]} inputs but branches give {confidence_dims[-1] + label_dims[-1]}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return BranchNetwork(
        confidence_branch=init_network(mlp_specs(confidence_dims, "relu", "relu"), rng),
        label_branch=init_network(mlp_specs(label_dims, "relu", "relu"), rng),
        combiner=init_network(mlp_specs(combiner_dims, "relu", "sigmoid"), rng),
    )


# =============================================================================
# Forward / backward
# =============================================================================


def _activate(kind: str, pre: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * pre))
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "softmax":
        shifted = np.exp(pre - pre.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)
    return pre


def _activation_backward(kind: str, pre: np.ndarray, out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return grad * (pre > 0)
    if kind == "sigmoid":
        return grad * out * (1.0 - out)
    if kind == "tanh":
        return grad * (1.0 - out**2)
    if kind == "softmax":
        return out * (grad - np.sum(grad * out, axis=1, keepdims=True))
    return grad


def _as_matrix(inputs: np.ndarray, expected: int) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"inputs must be a 2-D matrix, got shape {x.shape}")
    if x.shape[1] != expected:
        raise ShapeError(f"network expects {expected} input columns, got {x.shape[1]}")
    return x


def _network_forward(
    net: Network, x: np.ndarray, mode: str, update_running: bool = True
) -> tuple[np.ndarray, list[dict]]:
    cache = []
    for i, layer in enumerate(net.layers):
        spec = layer.spec
        entry: dict[str, Any] = {"x": x}
        z = x @ layer.weight + layer.bias
        if spec.batch_norm:
            if mode == "train":
                mean, var = z.mean(axis=0), z.var(axis=0)
            else:
                mean, var = layer.running_mean, layer.running_var
            if mode == "train" and update_running:
                layer.running_mean = BN_MOMENTUM * layer.running_mean + (1.0 - BN_MOMENTUM) * mean
                layer.running_var = BN_MOMENTUM * layer.running_var + (1.0 - BN_MOMENTUM) * var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            x_hat = (z - mean) * inv_std
            entry.update(x_hat=x_hat, inv_std=inv_std)
            pre = layer.gamma * x_hat + layer.beta
        else:
            pre = z
        out = _activate(spec.activation, pre)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"layer {i} ({spec.activation}) produced non-finite values")
        entry.update(pre=pre, out=out)
        cache.append(entry)
        x = out
    return x, cache


def _network_backward(net: Network, cache: list[dict], mode: str, grad: np.ndarray) -> tuple[Gradients, np.ndarray]:
    grads: list[list[np.ndarray]] = []
    for layer, entry in zip(reversed(net.layers), reversed(cache)):
        spec = layer.spec
        d_pre = _activation_backward(spec.activation, entry["pre"], entry["out"], grad)
        if spec.batch_norm:
            x_hat, inv_std = entry["x_hat"], entry["inv_std"]
            d_gamma = np.sum(d_pre * x_hat, axis=0)
            d_beta = np.sum(d_pre, axis=0)
            d_xhat = d_pre * layer.gamma
            if mode == "train":
                n = d_xhat.shape[0]
                dz = (inv_std / n) * (
                    n * d_xhat - d_xhat.sum(axis=0) - x_hat * np.sum(d_xhat * x_hat, axis=0)
                )
            else:
                dz = d_xhat * inv_std
            bn_grads = [d_gamma, d_beta]
        else:
            dz = d_pre
            bn_grads = []
        layer_grads = [entry["x"].T @ dz, dz.sum(axis=0)] + bn_grads
        grads.append(layer_grads)
        grad = dz @ layer.weight.T
    flat = [g for layer_grads in reversed(grads) for g in layer_grads]
    return flat, grad


def forward_with_cache(
    net: Model, inputs: np.ndarray, mode: str = "eval", update_running: bool = True
) -> tuple[np.ndarray, dict]:
    """
    Run a forward pass and keep what the backward pass needs.

    Parameters
    ----------
    net :
        A ``Network`` or ``BranchNetwork``.
    inputs :
        Matrix of shape ``(n, input_dim)``.
    mode :
        ``"train"`` normalizes with batch statistics and updates running statistics;
        ``"eval"`` uses the stored running statistics and mutates nothing.
    update_running :
        Set to ``False`` to use batch statistics in train mode without touching the running ones.

    Returns
    -------
    tuple[numpy.ndarray, dict]
        The outputs and an opaque cache for :func:`backward_from_output`.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _as_matrix(inputs, net.input_dim)
    if isinstance(net, BranchNetwork):
        a, cache_a = _network_forward(net.confidence_branch, x[:, : net.split], mode, update_running)
        b, cache_b = _network_forward(net.label_branch, x[:, net.split :], mode, update_running)
        out, cache_c = _network_forward(net.combiner, np.concatenate([a, b], axis=1), mode, update_running)
        return out, {"mode": mode, "branch": (cache_a, cache_b, cache_c), "width_a": a.shape[1]}
    out, cache = _network_forward(net, x, mode, update_running)
    return out, {"mode": mode, "layers": cache}


def forward(net: Model, inputs: np.ndarray, mode: str = "eval", update_running: bool = True) -> np.ndarray:
    """
    Evaluate ``net`` on ``inputs``.

    Raises
    ------
    ShapeError
        If ``inputs`` is not a matrix with ``net.input_dim`` columns.
    NonFiniteError
        If any layer produces NaN or infinite values.
    """
    return forward_with_cache(net, inputs, mode, update_running)[0]


def backward_from_output(net: Model, cache: dict, grad_output: np.ndarray) -> tuple[Gradients, np.ndarray]:
    """
    Back-propagate ``grad_output`` (the gradient w.r.t. the network outputs).

    Returns
    -------
    tuple[list[numpy.ndarray], numpy.ndarray]
        Parameter gradients ordered like ``net.parameters()`` and the gradient w.r.t. the inputs.
    """
    mode = cache["mode"]
    if isinstance(net, BranchNetwork):
        cache_a, cache_b, cache_c = cache["branch"]
        grads_c, d_h = _network_backward(net.combiner, cache_c, mode, grad_output)
        width = cache["width_a"]
        grads_a, d_xa = _network_backward(net.confidence_branch, cache_a, mode, d_h[:, :width])
        grads_b, d_xb = _network_backward(net.label_branch, cache_b, mode, d_h[:, width:])
        return grads_a + grads_b + grads_c, np.concatenate([d_xa, d_xb], axis=1)
    return _network_backward(net, cache["layers"], mode, grad_output)


# =============================================================================
# Losses
# =============================================================================


def _check_loss_inputs(kind: str, predictions: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if kind not in LOSSES:
        raise ValueError(f"unknown loss '{kind}', expected one of {LOSSES}")
    p = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    t = np.asarray(targets)
    if p.shape[0] == 0:
        raise EmptyDataError("loss of an empty batch is undefined")
    if kind == "cross_entropy":
        t = t.astype(np.int64).reshape(-1)
        if t.shape[0] != p.shape[0]:
            raise ShapeError(f"{p.shape[0]} predictions but {t.shape[0]} labels")
        if t.min() < 0 or t.max() >= p.shape[1]:
            raise LabelRangeError(f"labels must lie in [0, {p.shape[1]})")
    else:
        t = t.astype(np.float64).reshape(p.shape[0], -1)
        if t.shape != p.shape:
            raise ShapeError(f"predictions {p.shape} and targets {t.shape} differ")
    return p, t


def loss_value(kind: str, predictions: np.ndarray, targets: np.ndarray) -> float:
    """
    Mean loss over the batch.

    Parameters
    ----------
    kind :
        ``"mse"`` (squared error averaged over samples and dimensions), ``"cross_entropy"``
        (integer labels against probability rows) or ``"binary_cross_entropy"`` (0/1 targets).
    predictions :
        Model outputs, ``(n, m)``.
    targets :
        Labels ``(n,)`` for cross-entropy, otherwise a matrix shaped like ``predictions``.

    Returns
    -------
    float
        The loss value. Probabilities are clamped to ``[1e-12, 1]`` before taking logs.
    """
    p, t = _check_loss_inputs(kind, predictions, targets)
    n = p.shape[0]
    if kind == "mse":
        return float(np.sum((p - t) ** 2) / p.size)
    if kind == "cross_entropy":
        picked = np.clip(p[np.arange(n), t], CE_CLAMP, 1.0)
        return float(-np.mean(np.log(picked)))
    pc = np.clip(p, CE_CLAMP, 1.0 - CE_CLAMP)
    return float(-np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))


def loss_gradient(kind: str, predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """
    Gradient of :func:`loss_value` with respect to ``predictions``.

    Entries whose probability was clamped get a zero gradient, matching the flat clamped loss.
    """
    p, t = _check_loss_inputs(kind, predictions, targets)
    n = p.shape[0]
    if kind == "mse":
        return 2.0 * (p - t) / p.size
    if kind == "cross_entropy":
        grad = np.zeros_like(p)
        picked = p[np.arange(n), t]
        grad[np.arange(n), t] = np.where(picked > CE_CLAMP, -1.0 / (n * np.maximum(picked, CE_CLAMP)), 0.0)
        return grad
    pc = np.clip(p, CE_CLAMP, 1.0 - CE_CLAMP)
    inside = (p > CE_CLAMP) & (p < 1.0 - CE_CLAMP)
    return np.where(inside, (pc - t) / (pc * (1.0 - pc)) / p.size, 0.0)


def loss_and_gradients(net: Model, batch: Batch, loss: str, mode: str = "train") -> tuple[float, Gradients]:
    """Forward ``batch`` through ``net`` and return the mean loss with its parameter gradients."""
    out, cache = forward_with_cache(net, batch.inputs, mode)
    value = loss_value(loss, out, batch.targets)
    grads, _ = backward_from_output(net, cache, loss_gradient(loss, out, batch.targets))
    return value, grads


def backward(net: Model, batch: Batch, loss: str, mode: str = "train") -> Gradients:
    """
    Gradients of the mean batch loss with respect to every parameter of ``net``.

    Returns
    -------
    list[numpy.ndarray]
        One array per entry of ``net.parameters()``, identically shaped.
    """
    return loss_and_gradients(net, batch, loss, mode)[1]


# =============================================================================
# Optimizers
# =============================================================================


def make_optimizer(kind: str, net: Model, learning_rate: float) -> OptimizerState:
    """Create zeroed optimizer state for ``net``."""
    if kind not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer '{kind}', expected one of {OPTIMIZERS}")
    params = net.parameters()
    return OptimizerState(
        kind=kind,
        learning_rate=learning_rate,
        first_moments=[np.zeros_like(p) for p in params] if kind == "adam" else [],
        second_moments=[np.zeros_like(p) for p in params] if kind == "adam" else [],
    )


def optimizer_step(state: OptimizerState, net: Model, grads: Gradients) -> Model:
    """
    Apply one SGD or Adam update to ``net`` in place.

    Adam uses bias-corrected moments: ``p -= lr * m_hat / (sqrt(v_hat) + eps)``.

    Raises
    ------
    ShapeError
        If ``grads`` does not line up with ``net.parameters()``.
    """
    params = net.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeError("gradients do not match the network's parameters")

    state.step += 1
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= state.learning_rate * g
        return net

    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return net


# =============================================================================
# Training loop
# =============================================================================


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    """Yield shuffled index arrays covering ``range(n)`` once."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_network(
    net: Model,
    inputs: np.ndarray,
    targets: np.ndarray,
    loss: str,
    *,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    rng: np.random.Generator,
    optimizer: str = "adam",
    weight_decay: float = 0.0,
    batches: Callable[[np.random.Generator], Iterable[np.ndarray]] | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
    name: str = "network",
    log_every: int = 10,
) -> list[float]:
    """
    Fit ``net`` with mini-batch gradient descent.

    Parameters
    ----------
    net :
        The model to update in place.
    inputs, targets :
        Full training set.
    loss :
        Loss kind, see :func:`loss_value`.
    epochs, batch_size, learning_rate :
        Schedule.
    rng :
        Source of the batch order.
    optimizer :
        ``"adam"`` or ``"sgd"``.
    weight_decay :
        L2 coefficient added to weight-matrix gradients (not biases).
    batches :
        Optional replacement for the shuffled batch generator, e.g. balanced sampling.
    on_epoch :
        Called with ``(epoch, mean_loss)`` after every epoch.
    name :
        Used in log lines and error messages.
    log_every :
        Log at INFO every this many epochs, DEBUG otherwise.

    Returns
    -------
    list[float]
        Mean training loss per epoch.

    Raises
    ------
    DivergenceError
        If a batch loss becomes non-finite.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets)
    state = make_optimizer(optimizer, net, learning_rate)
    weight_ids = {id(layer.weight) for layer in _dense_layers(net)}
    trace = []

    for epoch in range(epochs):
        batch_losses = []
        for idx in batches(rng) if batches is not None else minibatches(len(x), batch_size, rng):
            try:
                value, grads = loss_and_gradients(net, Batch(x[idx], y[idx]), loss, mode="train")
            except NonFiniteError as err:
                raise DivergenceError(f"{name} produced non-finite activations: {err}", epoch) from err
            if not np.isfinite(value):
                raise DivergenceError(f"{name} loss is not finite", epoch, {name: value})
            if weight_decay:
                grads = [
                    g + weight_decay * p if id(p) in weight_ids else g for g, p in zip(grads, net.parameters())
                ]
            optimizer_step(state, net, grads)
            batch_losses.append(value)
        mean_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        trace.append(mean_loss)
        level = logging.INFO if log_every and (epoch + 1) % log_every == 0 else logging.DEBUG
        logger.log(level, "%s epoch %d/%d loss %.6f", name, epoch + 1, epochs, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return trace


def _dense_layers(net: Model) -> list[DenseLayer]:
    if isinstance(net, BranchNetwork):
        return net.confidence_branch.layers + net.label_branch.layers + net.combiner.layers
    return net.layers


# =============================================================================
# Persistence
# =============================================================================


def _layer_to_dict(layer: DenseLayer) -> dict[str, Any]:
    entry: dict[str, Any] = layer.spec.get_dict() | {"weight": layer.weight.tolist(), "bias": layer.bias.tolist()}
    if layer.spec.batch_norm:
        entry.update(
            gamma=layer.gamma.tolist(),  # type: ignore[union-attr]
            beta=layer.beta.tolist(),  # type: ignore[union-attr]
            running_mean=layer.running_mean.tolist(),  # type: ignore[union-attr]
            running_var=layer.running_var.tolist(),  # type: ignore[union-attr]
        )
    return entry


def _layer_from_dict(entry: dict[str, Any]) -> DenseLayer:
    spec = LayerSpec(
        int(entry["input_dim"]), int(entry["output_dim"]), str(entry["activation"]), bool(entry["batch_norm"])
    )
    layer = DenseLayer(spec, np.asarray(entry["weight"], dtype=np.float64), np.asarray(entry["bias"], dtype=np.float64))
    if spec.batch_norm:
        for name in ("gamma", "beta", "running_mean", "running_var"):
            setattr(layer, name, np.asarray(entry[name], dtype=np.float64))
    if layer.weight.shape != (spec.input_dim, spec.output_dim) or layer.bias.shape != (spec.output_dim,):
        raise ModelFormatError("parameter shapes do not match the layer spec")
    return layer


def network_to_dict(net: Model) -> dict[str, Any]:
    """Self-describing, JSON-serializable description of ``net``."""
    header = {"format": NETWORK_FORMAT, "version": FORMAT_VERSION}
    if isinstance(net, BranchNetwork):
        return header | {
            "kind": "branch",
            "confidence_branch": [_layer_to_dict(layer) for layer in net.confidence_branch.layers],
            "label_branch": [_layer_to_dict(layer) for layer in net.label_branch.layers],
            "combiner": [_layer_to_dict(layer) for layer in net.combiner.layers],
        }
    return header | {"kind": "dense", "layers": [_layer_to_dict(layer) for layer in net.layers]}


def network_from_dict(document: dict[str, Any]) -> Model:
    """
    Rebuild a network from :func:`network_to_dict` output.

    Raises
    ------
    ModelFormatError
        If the document has the wrong format tag, an unknown version or inconsistent shapes.
    """
    if document.get("format") != NETWORK_FORMAT:
        raise ModelFormatError(f"not a {NETWORK_FORMAT} document")
    if document.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported version {document.get('version')!r}")
    try:
        if document.get("kind") == "branch":
            net: Model = BranchNetwork(
                Network([_layer_from_dict(e) for e in document["confidence_branch"]]),
                Network([_layer_from_dict(e) for e in document["label_branch"]]),
                Network([_layer_from_dict(e) for e in document["combiner"]]),
            )
            for part in (net.confidence_branch, net.label_branch, net.combiner):
                _validate_specs(part.specs)
        else:
            net = Network([_layer_from_dict(e) for e in document["layers"]])
            _validate_specs(net.specs)
    except (KeyError, TypeError, ValueError, LayerSpecError) as err:
        raise ModelFormatError(f"malformed network document: {err}") from err
    return net


def save_network(net: Model, path: str | Path) -> Path:
    """Write ``net`` as JSON; floats keep their shortest round-trip representation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(network_to_dict(net)))
    return path


def load_network(path: str | Path) -> Model:
    """Read a network written by :func:`save_network`."""
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ModelFormatError(f"{path}: not valid JSON ({err})") from err
    return network_from_dict(document)

"""
purilab - confidence-score purifier.

The purifier G is an autoencoder over confidence vectors. It is trained on a reference set to
reconstruct the target's confidences while keeping their labels, optionally against an
adversarial inversion model H and a discriminator I that separates raw from purified vectors.
"""

from __future__ import annotations

__all__ = [
    "PurifierBundle",
    "purifier_dims",
    "init_purifier",
    "init_adversary",
    "init_discriminator",
    "discriminator_inputs",
    "purifier_loss_base",
    "purifier_objective",
    "discriminator_objective",
    "train_step_H",
    "train_step_I",
    "train_step_G",
    "reference_features",
    "train_purifier",
    "purify",
    "dispersion",
    "save_bundle",
    "load_bundle",
]

import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import yaml

from .backend.CONSTANTS import DISCRIMINATOR_CLAMP
from .backend.error_handling import DivergenceError, ModeError, ModelFormatError, NonFiniteError, ShapeError
from .backend.utilities import PurifierHyper, derive_rng
from .data import LabeledDataset, Splits
from .nn_core import (
    BranchNetwork,
    Gradients,
    Network,
    OptimizerState,
    backward_from_output,
    forward,
    forward_with_cache,
    init_branch_network,
    init_network,
    load_network,
    loss_gradient,
    loss_value,
    make_optimizer,
    minibatches,
    mlp_specs,
    optimizer_step,
    save_network,
)

logger = logging.getLogger(__name__)

ConfidenceSource = Union[Network, Callable[[np.ndarray], np.ndarray]]

ADVERSARY_HIDDEN = (512, 1024)
DISCRIMINATOR_CONFIDENCE_BRANCH = (1024, 512, 64)
DISCRIMINATOR_LABEL_BRANCH = (512, 64)
DISCRIMINATOR_COMBINER = (64,)


@dataclass
class PurifierBundle:
    """A trained purifier with the adversaries and hyperparameters that produced it."""

    G: Network
    hyper: PurifierHyper
    H: Network | None = None
    I: BranchNetwork | None = None
    traces: dict[str, list[float]] = field(default_factory=dict)
    train_seconds: float = 0.0

    @property
    def num_classes(self) -> int:
        return self.G.input_dim


# =============================================================================
# Architectures
# =============================================================================


def purifier_dims(k: int) -> list[int]:
    """
    Autoencoder widths ``[k, k/2, k/5, k/10, k/5, k/2, k]``.

    Every hidden width is at least ``max(2, ceil(log2 k))`` so the ReLU bottleneck has a distinct
    activation pattern available for each class.
    """
    floor = max(2, math.ceil(math.log2(k)))
    half, fifth, tenth = (max(floor, k // r) for r in (2, 5, 10))
    return [k, half, fifth, tenth, fifth, half, k]


def init_purifier(k: int, seed: int | np.random.Generator, dims: Sequence[int] | None = None) -> Network:
    """ReLU + batch-norm hidden layers, softmax output."""
    return init_network(mlp_specs(dims or purifier_dims(k), "relu", "softmax", batch_norm=True), seed)


def init_adversary(
    k: int, d: int, seed: int | np.random.Generator, hidden: Sequence[int] = ADVERSARY_HIDDEN
) -> Network:
    """Inversion network ``k -> hidden -> d`` with a sigmoid output, shared by H and the inversion attack."""
    return init_network(mlp_specs([k, *hidden, d], "relu", "sigmoid"), seed)


def init_discriminator(
    k: int,
    seed: int | np.random.Generator,
    confidence_branch: Sequence[int] = DISCRIMINATOR_CONFIDENCE_BRANCH,
    label_branch: Sequence[int] = DISCRIMINATOR_LABEL_BRANCH,
    combiner: Sequence[int] = DISCRIMINATOR_COMBINER,
) -> BranchNetwork:
    """Two-branch network over ``[confidence | one-hot label]`` ending in one sigmoid unit."""
    return init_branch_network(
        [k, *confidence_branch],
        [k, *label_branch],
        [confidence_branch[-1] + label_branch[-1], *combiner, 1],
        seed,
    )


def discriminator_inputs(conf: np.ndarray) -> np.ndarray:
    """Concatenate each confidence vector with the one-hot encoding of its own argmax."""
    labels = np.argmax(conf, axis=1)
    return np.concatenate([conf, np.eye(conf.shape[1])[labels]], axis=1)


# =============================================================================
# Objectives
# =============================================================================


def purifier_loss_base(G: Network, conf: np.ndarray, lam: float = 1.0, mode: str = "eval") -> float:
    """
    Reconstruction MSE plus ``lam`` times the cross-entropy against the input's argmax.

    Parameters
    ----------
    G :
        The purifier.
    conf :
        Batch of confidence vectors, ``(n, k)``.
    lam :
        Label-loss weight.
    mode :
        Forward mode of ``G``.
    """
    purified = forward(G, conf, mode)
    labels = np.argmax(conf, axis=1)
    return loss_value("mse", purified, conf) + lam * loss_value("cross_entropy", purified, labels)


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, DISCRIMINATOR_CLAMP, 1.0 - DISCRIMINATOR_CLAMP)


def _unclamped(p: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Zero ``grad`` wherever ``p`` was clamped; the clamped log is flat there."""
    return np.where((p > DISCRIMINATOR_CLAMP) & (p < 1.0 - DISCRIMINATOR_CLAMP), grad, 0.0)


def purifier_objective(
    G: Network,
    conf: np.ndarray,
    hyper: PurifierHyper,
    H: Network | None = None,
    I: BranchNetwork | None = None,
    features: np.ndarray | None = None,
    mode: str = "train",
) -> tuple[float, Gradients, dict[str, float]]:
    """
    Value and G-gradients of the purifier's composite loss.

    ``L = MSE(G(c), c) + lam * CE(G(c), argmax c) - alpha * MSE(x, H(G(c))) + beta * mean log(1 - I(G(c)))``

    Gradients flow through H and I into G; neither H nor I is modified.

    Parameters
    ----------
    G :
        The purifier.
    conf :
        Raw confidences ``c = F(x)``.
    hyper :
        Loss weights; ``alpha`` needs ``H`` and ``features``, ``beta`` needs ``I``.
    H, I :
        Current adversary and discriminator.
    features :
        The inputs ``x`` behind ``conf``.
    mode :
        Forward mode of ``G``.

    Returns
    -------
    tuple[float, list[numpy.ndarray], dict[str, float]]
        The loss, its gradients w.r.t. ``G.parameters()`` and the individual terms.

    Raises
    ------
    ModeError
        If a nonzero weight lacks the network it needs.
    """
    if hyper.alpha > 0 and (H is None or features is None):
        raise ModeError(f"alpha={hyper.alpha} needs an adversary and the input features", "purifier.alpha")
    if hyper.beta > 0 and I is None:
        raise ModeError(f"beta={hyper.beta} needs a discriminator", "purifier.beta")

    purified, cache = forward_with_cache(G, conf, mode)
    labels = np.argmax(conf, axis=1)
    terms = {
        "reconstruction": loss_value("mse", purified, conf),
        "label": loss_value("cross_entropy", purified, labels),
    }
    grad = loss_gradient("mse", purified, conf) + hyper.lam * loss_gradient("cross_entropy", purified, labels)
    value = terms["reconstruction"] + hyper.lam * terms["label"]

    if hyper.alpha > 0:
        reconstruction, h_cache = forward_with_cache(H, purified, "eval")
        terms["inversion"] = loss_value("mse", reconstruction, features)
        _, d_purified = backward_from_output(H, h_cache, loss_gradient("mse", reconstruction, features))
        value -= hyper.alpha * terms["inversion"]
        grad -= hyper.alpha * d_purified

    if hyper.beta > 0:
        judged, i_cache = forward_with_cache(I, discriminator_inputs(purified), "eval")
        p = _clamp(judged)
        terms["discriminator"] = float(np.mean(np.log(1.0 - p)))
        _, d_inputs = backward_from_output(I, i_cache, _unclamped(judged, -1.0 / ((1.0 - p) * p.shape[0])))
        value += hyper.beta * terms["discriminator"]
        grad += hyper.beta * d_inputs[:, : purified.shape[1]]

    grads, _ = backward_from_output(G, cache, grad)
    return float(value), grads, terms


def discriminator_objective(I: BranchNetwork, real: np.ndarray, fake: np.ndarray) -> float:
    """Mean of ``log I(real) + log(1 - I(fake))``; 0 is a perfect discriminator, ``2 ln 0.5`` a coin flip."""
    p_real = _clamp(forward(I, discriminator_inputs(real)))
    p_fake = _clamp(forward(I, discriminator_inputs(fake)))
    return float(np.mean(np.log(p_real)) + np.mean(np.log(1.0 - p_fake)))


# =============================================================================
# Alternating steps
# =============================================================================


def _purified(G: Network | None, conf: np.ndarray, purified: np.ndarray | None, mode: str) -> np.ndarray:
    if purified is not None:
        return purified
    if G is None:
        raise ShapeError("either G or its purified outputs are required")
    return forward(G, conf, mode, update_running=False)


def train_step_H(
    H: Network,
    optimizer: OptimizerState,
    features: np.ndarray,
    conf: np.ndarray | None = None,
    G: Network | None = None,
    purified: np.ndarray | None = None,
    g_mode: str = "train",
) -> float:
    """
    One descent step of H on ``MSE(x, H(G(c)))``; G is only read.

    Pass either ``G`` with ``conf`` or the already purified batch.

    Returns
    -------
    float
        The reconstruction loss before the step.
    """
    inputs = _purified(G, conf, purified, g_mode)
    reconstruction, cache = forward_with_cache(H, inputs, "train")
    value = loss_value("mse", reconstruction, features)
    grads, _ = backward_from_output(H, cache, loss_gradient("mse", reconstruction, features))
    optimizer_step(optimizer, H, grads)
    return value


def train_step_I(
    I: BranchNetwork,
    optimizer: OptimizerState,
    real: np.ndarray,
    G: Network | None = None,
    purified: np.ndarray | None = None,
    g_mode: str = "train",
) -> float:
    """
    One ascent step of I on ``mean log I(real) + log(1 - I(fake))``, taken as descent on its negation.

    Returns
    -------
    float
        The discriminator objective before the step.
    """
    fake = _purified(G, real, purified, g_mode)
    n_real, n_fake = real.shape[0], fake.shape[0]

    out_real, cache_real = forward_with_cache(I, discriminator_inputs(real), "train")
    out_fake, cache_fake = forward_with_cache(I, discriminator_inputs(fake), "train")
    p_real, p_fake = _clamp(out_real), _clamp(out_fake)
    value = float(np.mean(np.log(p_real)) + np.mean(np.log(1.0 - p_fake)))

    grads_real, _ = backward_from_output(I, cache_real, _unclamped(out_real, -1.0 / (p_real * n_real)))
    grads_fake, _ = backward_from_output(I, cache_fake, _unclamped(out_fake, 1.0 / ((1.0 - p_fake) * n_fake)))
    optimizer_step(optimizer, I, [a + b for a, b in zip(grads_real, grads_fake)])
    return value


def train_step_G(
    G: Network,
    optimizer: OptimizerState,
    conf: np.ndarray,
    hyper: PurifierHyper,
    H: Network | None = None,
    I: BranchNetwork | None = None,
    features: np.ndarray | None = None,
) -> float:
    """One descent step of G on :func:`purifier_objective`; returns the loss before the step."""
    value, grads, _ = purifier_objective(G, conf, hyper, H=H, I=I, features=features, mode="train")
    optimizer_step(optimizer, G, grads)
    return value


# =============================================================================
# Training
# =============================================================================


def _confidences(source: ConfidenceSource, features: np.ndarray) -> np.ndarray:
    if isinstance(source, Network):
        return forward(source, features)
    return np.asarray(source(features), dtype=np.float64)


def reference_features(splits: Splits, source: str, seed: int) -> LabeledDataset:
    """
    The purifier's training inputs.

    Parameters
    ----------
    splits :
        The experiment's allocation.
    source :
        ``"d2"`` (the reference set), ``"d1"`` (the target's own training set) or ``"random"``
        (uniform binary vectors as many as D2).
    seed :
        Experiment seed, used only for ``"random"``.
    """
    if source == "d1":
        return splits.train
    reference = splits.reference
    if source == "random":
        rng = derive_rng(seed, "purifier", "random_reference")
        features = (rng.random(reference.features.shape) < 0.5).astype(np.float64)
        return LabeledDataset(features, np.zeros(len(reference), dtype=np.int64), reference.num_classes)
    return reference


def train_purifier(
    F: ConfidenceSource,
    reference: LabeledDataset,
    hyper: PurifierHyper,
    seed: int,
    purifier_widths: Sequence[int] | None = None,
    adversary_hidden: Sequence[int] = ADVERSARY_HIDDEN,
    discriminator_widths: dict[str, Sequence[int]] | None = None,
    name: str = "purifier",
) -> PurifierBundle:
    """
    Train G on the target's confidences over ``reference``, alternating with H and I.

    Every mini-batch updates H (if the mode uses it), then I (if used), then G. G runs in
    train mode throughout; H and I see its batch-statistics outputs without advancing its
    running statistics.

    Parameters
    ----------
    F :
        The target network, or any callable returning confidence rows.
    reference :
        Samples whose confidences the purifier learns from.
    hyper :
        Weights, mode and schedule.
    seed :
        Experiment seed; G, H, I and the batch order get their own derived streams.
    purifier_widths :
        Override for :func:`purifier_dims`.
    adversary_hidden :
        Hidden widths of H.
    discriminator_widths :
        Optional ``confidence_branch``/``label_branch``/``combiner`` overrides for I.
    name :
        Stream name for seeding and logging; an attacker's surrogate passes its own.

    Returns
    -------
    PurifierBundle
        G, the adversaries that were trained, and per-epoch loss traces.

    Raises
    ------
    DivergenceError
        If any of the three losses becomes non-finite.
    """
    hyper.validate()
    start = time.perf_counter()
    x = reference.features
    conf = _confidences(F, x)
    k, d = conf.shape[1], x.shape[1]

    G = init_purifier(k, derive_rng(seed, name, "G"), purifier_widths)
    H = init_adversary(k, d, derive_rng(seed, name, "H"), adversary_hidden) if hyper.uses_adversary else None
    I = (
        init_discriminator(k, derive_rng(seed, name, "I"), **(discriminator_widths or {}))
        if hyper.uses_discriminator
        else None
    )
    opt_g = make_optimizer("adam", G, hyper.lr_generator)
    opt_h = make_optimizer("adam", H, hyper.lr_adversary) if H is not None else None
    opt_i = make_optimizer("adam", I, hyper.lr_discriminator) if I is not None else None
    batch_rng = derive_rng(seed, name, "batches")

    traces: dict[str, list[float]] = {"G": []}
    if H is not None:
        traces["H"] = []
    if I is not None:
        traces["I"] = []

    logger.info("%s: training %s on %d samples for %d epochs", name, hyper.label, len(reference), hyper.epochs)
    for epoch in range(hyper.epochs):
        sums = {model: 0.0 for model in traces}
        batches = 0
        for idx in minibatches(len(x), hyper.batch_size, batch_rng):
            c, xb = conf[idx], x[idx]
            losses = {}
            try:
                if H is not None or I is not None:
                    purified = forward(G, c, "train", update_running=False)
                if H is not None:
                    losses["H"] = train_step_H(H, opt_h, xb, purified=purified)  # type: ignore[arg-type]
                if I is not None:
                    losses["I"] = train_step_I(I, opt_i, c, purified=purified)  # type: ignore[arg-type]
                losses["G"] = train_step_G(G, opt_g, c, hyper, H=H, I=I, features=xb)
            except NonFiniteError as err:
                raise DivergenceError(f"purifier training produced non-finite values: {err}", epoch, losses) from err
            if not all(np.isfinite(v) for v in losses.values()):
                raise DivergenceError("purifier training diverged", epoch, losses)
            for model, value in losses.items():
                sums[model] += value
            batches += 1
        for model in traces:
            traces[model].append(sums[model] / max(batches, 1))
        level = logging.INFO if hyper.log_every and (epoch + 1) % hyper.log_every == 0 else logging.DEBUG
        logger.log(
            level,
            "%s epoch %d/%d %s",
            name,
            epoch + 1,
            hyper.epochs,
            " ".join(f"{model}={values[-1]:.6f}" for model, values in traces.items()),
        )

    return PurifierBundle(G=G, hyper=hyper, H=H, I=I, traces=traces, train_seconds=time.perf_counter() - start)


def purify(bundle: PurifierBundle | Network, conf: np.ndarray) -> np.ndarray:
    """
    Apply G in eval mode.

    Parameters
    ----------
    bundle :
        A trained bundle, or G itself.
    conf :
        One confidence vector or a matrix of them.

    Returns
    -------
    numpy.ndarray
        Purified vectors with the same shape as ``conf``.

    Raises
    ------
    ShapeError
        If the vector length differs from G's width.
    """
    G = bundle.G if isinstance(bundle, PurifierBundle) else bundle
    conf = np.asarray(conf, dtype=np.float64)
    single = conf.ndim == 1
    out = forward(G, conf.reshape(1, -1) if single else conf)
    return out[0] if single else out


def dispersion(conf: np.ndarray, labels: np.ndarray | None = None) -> float:
    """
    Mean over classes of the trace of the within-class covariance.

    Covariances are population covariances (divided by the class size), so a singleton class
    contributes 0.

    Parameters
    ----------
    conf :
        Confidence vectors, ``(n, k)``.
    labels :
        Class of each vector; defaults to the predicted class ``argmax``.
    """
    conf = np.atleast_2d(np.asarray(conf, dtype=np.float64))
    if conf.shape[0] == 0:
        raise ShapeError("dispersion of an empty set is undefined")
    labels = np.argmax(conf, axis=1) if labels is None else np.asarray(labels)
    traces = []
    for c in np.unique(labels):
        members = conf[labels == c]
        traces.append(float(np.sum(members.var(axis=0))))
    return float(np.mean(traces))


# =============================================================================
# Persistence
# =============================================================================


def save_bundle(bundle: PurifierBundle, directory: str | Path) -> Path:
    """Write ``G.json``, optional ``H.json``/``I.json`` and ``bundle.yaml`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_network(bundle.G, directory / "G.json")
    if bundle.H is not None:
        save_network(bundle.H, directory / "H.json")
    if bundle.I is not None:
        save_network(bundle.I, directory / "I.json")
    manifest = {
        "hyper": bundle.hyper.get_dict(),
        "networks": {"G": "G.json", "H": "H.json" if bundle.H else None, "I": "I.json" if bundle.I else None},
        "traces": bundle.traces,
    }
    (directory / "bundle.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False))
    return directory


def load_bundle(directory: str | Path) -> PurifierBundle:
    """
    Read a bundle written by :func:`save_bundle`.

    Raises
    ------
    ModelFormatError
        If ``bundle.yaml`` is missing or malformed.
    """
    directory = Path(directory)
    try:
        manifest = yaml.safe_load((directory / "bundle.yaml").read_text())
        hyper = PurifierHyper.populate(manifest["hyper"])
        networks = manifest["networks"]
    except (OSError, KeyError, TypeError, yaml.YAMLError) as err:
        raise ModelFormatError(f"{directory}: not a purifier bundle ({err})") from err
    return PurifierBundle(
        G=load_network(directory / networks["G"]),  # type: ignore[arg-type]
        hyper=hyper,
        H=load_network(directory / networks["H"]) if networks.get("H") else None,  # type: ignore[arg-type]
        I=load_network(directory / networks["I"]) if networks.get("I") else None,  # type: ignore[arg-type]
        traces=manifest.get("traces") or {},
    )

"""
purilab - target classifier and black-box oracle.
"""

from __future__ import annotations

__all__ = ["ConfidenceOracle", "Oracle", "target_specs", "train_target", "predict", "accuracy", "generalization_gap"]

import logging
import warnings
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .backend.CONSTANTS import SIMPLEX_TOL
from .backend.error_handling import EmptyDataError, GapWarning, NumericalError, ShapeError
from .backend.utilities import TargetConfig, derive_rng
from .baselines import DefenseTransform
from .data import LabeledDataset
from .nn_core import LayerSpec, Network, forward, init_network, mlp_specs, train_network

logger = logging.getLogger(__name__)


@runtime_checkable
class ConfidenceOracle(Protocol):
    """Anything an attacker can query: feature rows in, confidence rows out."""

    num_classes: int

    def predict(self, features: np.ndarray) -> np.ndarray: ...


@dataclass
class Oracle:
    """
    The target classifier as seen from outside, optionally behind a defense.

    Predictions run the network in eval mode, so the oracle has no hidden state.
    """

    network: Network
    defense: DefenseTransform | None = None

    @property
    def num_classes(self) -> int:
        return self.network.output_dim

    @property
    def feature_dim(self) -> int:
        return self.network.input_dim

    @property
    def label(self) -> str:
        return "none" if self.defense is None else self.defense.label

    def raw(self) -> "Oracle":
        """The same classifier without its defense."""
        return Oracle(self.network)

    def predict(self, features: np.ndarray) -> np.ndarray:
        """
        Confidence vectors for ``features``.

        Parameters
        ----------
        features :
            One feature vector or a matrix of them.

        Returns
        -------
        numpy.ndarray
            One simplex row per input; a single vector for a single input.

        Raises
        ------
        ShapeError
            If the feature width differs from the classifier's.
        NumericalError
            If a returned row is not a probability vector within ``SIMPLEX_TOL``.
        """
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        x = x.reshape(1, -1) if single else x
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ShapeError(f"oracle expects {self.feature_dim} features, got shape {np.shape(features)}")
        conf = forward(self.network, x)
        if self.defense is not None:
            conf = self.defense.apply(conf, x)
        if np.any(conf < -SIMPLEX_TOL) or not np.allclose(conf.sum(axis=1), 1.0, rtol=0.0, atol=SIMPLEX_TOL):
            raise NumericalError(f"oracle '{self.label}' returned rows that are not probability vectors")
        return conf[0] if single else conf

    __call__ = predict


def predict(oracle: ConfidenceOracle, features: np.ndarray) -> np.ndarray:
    """Query ``oracle``; see :meth:`Oracle.predict`."""
    return oracle.predict(features)


def accuracy(oracle: ConfidenceOracle, dataset: LabeledDataset) -> float:
    """Fraction of ``dataset`` whose argmax prediction equals the label."""
    if len(dataset) == 0:
        raise EmptyDataError("accuracy of an empty dataset is undefined")
    return float(np.mean(np.argmax(oracle.predict(dataset.features), axis=1) == dataset.labels))


def target_specs(feature_dim: int, num_classes: int, cfg: TargetConfig) -> list[LayerSpec]:
    """``[d, *hidden_dims, k]`` with ``cfg.activation`` hidden layers and a softmax output."""
    return mlp_specs([feature_dim, *cfg.hidden_dims, num_classes], cfg.activation, "softmax")


def train_target(
    d1: LabeledDataset, cfg: TargetConfig, eval_set: LabeledDataset | None = None, name: str = "target"
) -> Network:
    """
    Train the target classifier F on ``d1``.

    The full schedule always runs; there is no early stopping.

    Parameters
    ----------
    d1 :
        Training set; ``d1.num_classes`` fixes the output width.
    cfg :
        Architecture, schedule and seed.
    eval_set :
        Optional held-out set whose accuracy is logged each epoch.
    name :
        Stream name for seeding and logging; shadow models pass their own.

    Returns
    -------
    Network
        F with a softmax output.

    Raises
    ------
    EmptyDataError
        If ``d1`` is empty.
    DivergenceError
        If the loss becomes non-finite, with the epoch.
    """
    cfg.validate()
    if len(d1) == 0:
        raise EmptyDataError("cannot train on an empty dataset")
    net = init_network(target_specs(d1.feature_dim, d1.num_classes, cfg), derive_rng(cfg.seed, name, "init"))
    oracle = Oracle(net)

    def report(epoch: int, loss: float) -> None:
        if not cfg.log_every or (epoch + 1) % cfg.log_every != 0:
            return
        message = f"{name} epoch {epoch + 1}/{cfg.epochs} train acc {accuracy(oracle, d1):.4f}"
        if eval_set is not None and len(eval_set):
            message += f" test acc {accuracy(oracle, eval_set):.4f}"
        logger.info(message)

    train_network(
        net,
        d1.features,
        d1.labels,
        "cross_entropy",
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        rng=derive_rng(cfg.seed, name, "batches"),
        optimizer=cfg.optimizer,
        weight_decay=cfg.l2_weight_decay,
        on_epoch=report,
        name=name,
        log_every=0,
    )
    return net


def generalization_gap(
    oracle: ConfidenceOracle, train: LabeledDataset, test: LabeledDataset
) -> tuple[float, float, float]:
    """
    Train accuracy, test accuracy and their difference ``g``.

    Issues a :class:`GapWarning` when ``g <= 0``: membership results then carry no signal.
    """
    train_acc, test_acc = accuracy(oracle, train), accuracy(oracle, test)
    gap = train_acc - test_acc
    if gap <= 0:
        warnings.warn(f"generalization gap is {gap:.4f}; membership inference has no signal", GapWarning, stacklevel=2)
    return train_acc, test_acc, gap

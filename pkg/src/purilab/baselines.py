"""
purilab - training-free defenses and the defense transform.

One-hot encoding and label-preserving random noise, plus :class:`DefenseTransform`, which applies
any defense (including a trained purifier) to the target's confidence rows.
"""

from __future__ import annotations

__all__ = ["one_hot", "random_noise", "DefenseTransform", "build_defense"]

import logging
import warnings
import zlib
from dataclasses import dataclass

import numpy as np

from .backend.CONSTANTS import DEFENSE_KINDS, NOISE_MAX_RETRIES
from .backend.error_handling import ConfigurationError, DataError, NoiseFallbackWarning
from .backend.utilities import DefenseSpec
from .purifier import PurifierBundle, purify

logger = logging.getLogger(__name__)


def one_hot(conf: np.ndarray) -> np.ndarray:
    """
    Set the largest entry to 1 and every other entry to 0.

    Ties go to the lowest index. Works on a single vector or on rows of a matrix.
    """
    conf = np.asarray(conf, dtype=np.float64)
    return np.eye(conf.shape[-1])[np.argmax(conf, axis=-1)]


def random_noise(
    conf: np.ndarray, magnitude: float, rng: np.random.Generator, max_retries: int = NOISE_MAX_RETRIES
) -> np.ndarray:
    """
    Add uniform noise in ``[0, magnitude]`` to every entry and renormalize, keeping the predicted label.

    Draws that change the argmax are rejected and redrawn. After ``max_retries`` rejections the
    input is returned unchanged with a :class:`NoiseFallbackWarning`.

    Parameters
    ----------
    conf :
        One confidence vector.
    magnitude :
        Upper bound of the additive noise, in ``[0, 1]``.
    rng :
        Noise source.
    max_retries :
        Draws to attempt before falling back.

    Returns
    -------
    numpy.ndarray
        A confidence vector with the same argmax as ``conf``.

    Raises
    ------
    DataError
        If ``magnitude`` lies outside ``[0, 1]``.
    """
    conf = np.asarray(conf, dtype=np.float64)
    if not 0.0 <= magnitude <= 1.0:
        raise DataError(f"noise magnitude must lie in [0, 1], got {magnitude}")
    if magnitude == 0:
        return conf.copy()
    label = np.argmax(conf)
    for _ in range(max_retries):
        noisy = conf + rng.uniform(0.0, magnitude, size=conf.shape)
        noisy /= noisy.sum()
        if np.argmax(noisy) == label:
            return noisy
    warnings.warn(
        f"random noise changed the label in {max_retries} draws; returning the input unchanged",
        NoiseFallbackWarning,
        stacklevel=2,
    )
    return conf.copy()


@dataclass
class DefenseTransform:
    """
    A defense applied to the target's confidence rows.

    Random noise is keyed on the queried input, so repeating a query repeats its answer.
    """

    kind: str = "none"
    magnitude: float = 0.0
    seed: int = 0
    bundle: PurifierBundle | None = None

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ConfigurationError(f"must be one of {DEFENSE_KINDS}", "defense.kind")
        if self.kind == "purifier" and self.bundle is None:
            raise ConfigurationError("a purifier defense needs a trained bundle", "defense.purifier")

    @property
    def label(self) -> str:
        if self.kind == "random_noise":
            return f"random_noise({self.magnitude:g})"
        if self.kind == "purifier":
            return self.bundle.hyper.label  # type: ignore[union-attr]
        return self.kind

    @property
    def preserves_argmax(self) -> bool:
        return self.kind != "purifier"

    def _row_rng(self, key: np.ndarray) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(np.ascontiguousarray(key, dtype=np.float64).tobytes())])

    def apply(self, conf: np.ndarray, features: np.ndarray | None = None) -> np.ndarray:
        """
        Transform confidence rows.

        Parameters
        ----------
        conf :
            Raw confidences, ``(n, k)``.
        features :
            The queried inputs, used to key random noise; ``conf`` itself is used when absent.
        """
        conf = np.atleast_2d(np.asarray(conf, dtype=np.float64))
        if self.kind == "none":
            return conf.copy()
        if self.kind == "one_hot":
            return one_hot(conf)
        if self.kind == "purifier":
            return purify(self.bundle, conf)  # type: ignore[arg-type]
        keys = conf if features is None else np.atleast_2d(features)
        return np.stack([random_noise(row, self.magnitude, self._row_rng(key)) for row, key in zip(conf, keys)])


def build_defense(spec: DefenseSpec, bundle: PurifierBundle | None = None) -> DefenseTransform:
    """Turn a configured defense into a transform; purifier defenses need their trained ``bundle``."""
    return DefenseTransform(kind=spec.kind, magnitude=spec.magnitude, seed=spec.seed, bundle=bundle)

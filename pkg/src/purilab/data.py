"""
purilab - datasets and splits.

Synthetic prototype-plus-bit-flip data, CSV ingestion, and the D1/D2/D3 allocation with the attacker's
subsets and the inversion auxiliary/test partition.
"""

from __future__ import annotations

__all__ = [
    "LabeledDataset",
    "Splits",
    "AttackDataView",
    "InversionTestSet",
    "class_prototypes",
    "generate_synthetic",
    "allocate",
    "inversion_data",
    "load_csv",
    "save_csv",
    "write_manifest",
    "read_manifest",
]

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .backend.CONSTANTS import INVERSION_AUX_FRACTION
from .backend.error_handling import (
    CSVFormatError,
    EmptyDataError,
    InsufficientDataError,
    LabelRangeError,
    ModelFormatError,
    ShapeError,
)
from .backend.utilities import AllocationSpec, SyntheticSpec, derive_rng

logger = logging.getLogger(__name__)

IID_NOTE = (
    "D1, D2 and D3 are drawn i.i.d. from one generator; the reference set is assumed to share "
    "the class distribution of the training set."
)


@dataclass
class LabeledDataset:
    """
    Feature matrix with integer class labels.

    Raises
    ------
    ShapeError
        If ``features`` is not 2-D or its rows disagree with ``labels``.
    LabelRangeError
        If a label falls outside ``[0, num_classes)``.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be a matrix, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        """Rows at ``indices``, in that order."""
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices], self.num_classes)

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        """Rows of ``self`` followed by rows of ``other``."""
        if other.feature_dim != self.feature_dim:
            raise ShapeError(f"cannot concatenate {self.feature_dim} and {other.feature_dim} features")
        return LabeledDataset(
            np.concatenate([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            max(self.num_classes, other.num_classes),
        )


@dataclass
class AttackDataView:
    """
    What an attacker is given to train on.

    Mlleaks gets only the unlabeled ``pool`` (the union of D_A and D'_A, shuffled); NSH gets
    ``members`` and ``nonmembers`` separately.
    """

    pool: LabeledDataset | None = None
    members: LabeledDataset | None = None
    nonmembers: LabeledDataset | None = None

    @property
    def has_membership_labels(self) -> bool:
        return self.members is not None or self.nonmembers is not None


@dataclass
class InversionTestSet:
    """Held-out inversion targets, tagged by membership in D1."""

    members: LabeledDataset
    nonmembers: LabeledDataset


@dataclass
class Splits:
    """Index arrays into ``dataset`` for every role in an experiment."""

    dataset: LabeledDataset
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    d_a: np.ndarray
    d_a_prime: np.ndarray
    seed: int = 0
    reference_size: int | None = None

    @property
    def train(self) -> LabeledDataset:
        """D1, the target's training set."""
        return self.dataset.subset(self.d1)

    @property
    def reference(self) -> LabeledDataset:
        """D2, optionally truncated to ``reference_size``."""
        indices = self.d2 if self.reference_size is None else self.d2[: self.reference_size]
        return self.dataset.subset(indices)

    @property
    def test(self) -> LabeledDataset:
        """D3, the held-out test set."""
        return self.dataset.subset(self.d3)

    @property
    def eval_members(self) -> LabeledDataset:
        """D1 minus D_A."""
        return self.dataset.subset(np.setdiff1d(self.d1, self.d_a, assume_unique=True))

    @property
    def eval_nonmembers(self) -> LabeledDataset:
        """D3 minus D'_A."""
        return self.dataset.subset(np.setdiff1d(self.d3, self.d_a_prime, assume_unique=True))

    def attacker_view(self, with_membership: bool = False) -> AttackDataView:
        """
        Build the attacker's training view.

        Parameters
        ----------
        with_membership :
            ``True`` gives D_A and D'_A separately (NSH); ``False`` gives only their shuffled union (Mlleaks).
        """
        if with_membership:
            return AttackDataView(
                members=self.dataset.subset(self.d_a), nonmembers=self.dataset.subset(self.d_a_prime)
            )
        pool = np.concatenate([self.d_a, self.d_a_prime])
        pool = pool[derive_rng(self.seed, "attacker_pool").permutation(pool.size)]
        return AttackDataView(pool=self.dataset.subset(pool))


def class_prototypes(spec: SyntheticSpec) -> np.ndarray:
    """The ``(k, d)`` binary prototypes :func:`generate_synthetic` builds ``spec``'s samples from."""
    return _draw(spec)[0]


def _draw(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = derive_rng(spec.seed, "synthetic")
    prototypes = rng.random((spec.num_classes, spec.feature_dim)) < spec.prototype_density
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    flips = rng.random((labels.size, spec.feature_dim)) < spec.flip_noise
    return prototypes.astype(np.float64), np.logical_xor(prototypes[labels], flips).astype(np.float64), labels


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """
    Generate a clustered binary dataset.

    Each class gets a Bernoulli(``prototype_density``) prototype; each sample copies its class
    prototype and flips every bit independently with probability ``flip_noise``. Samples are
    ordered by class; :func:`allocate` shuffles.

    Parameters
    ----------
    spec :
        Generator parameters, including the seed.

    Returns
    -------
    LabeledDataset
        ``num_classes * samples_per_class`` samples with 0/1 features.
    """
    spec.validate()
    _, features, labels = _draw(spec)
    logger.debug("generated %d samples, k=%d, d=%d", labels.size, spec.num_classes, spec.feature_dim)
    return LabeledDataset(features, labels, spec.num_classes)


def allocate(dataset: LabeledDataset, sizes: AllocationSpec | None = None, seed: int = 0) -> Splits:
    """
    Shuffle ``dataset`` into disjoint D1/D2/D3 and draw the attacker's subsets.

    Parameters
    ----------
    dataset :
        Full dataset.
    sizes :
        Split sizes and attacker fractions; ``None`` gives equal thirds with half-sized attacker subsets.
    seed :
        Experiment seed.

    Returns
    -------
    Splits
        Index arrays; D_A is drawn from D1 and D'_A from D3.

    Raises
    ------
    InsufficientDataError
        If the requested sizes exceed the dataset.
    """
    sizes = sizes or AllocationSpec()
    s1, s2, s3 = sizes.resolve(len(dataset))
    if min(s1, s2, s3) < 1:
        raise InsufficientDataError(f"{len(dataset)} samples cannot fill three non-empty splits")
    if s1 + s2 + s3 > len(dataset):
        raise InsufficientDataError(f"requested {s1}+{s2}+{s3} samples but the dataset has {len(dataset)}")
    if sizes.reference_size is not None and sizes.reference_size > s2:
        raise InsufficientDataError(f"reference_size {sizes.reference_size} exceeds |D2| = {s2}")

    rng = derive_rng(seed, "allocate")
    order = rng.permutation(len(dataset))
    d1, d2, d3 = order[:s1], order[s1 : s1 + s2], order[s1 + s2 : s1 + s2 + s3]
    n_a = int(round(sizes.attacker_member_fraction * s1))
    n_a_prime = int(round(sizes.attacker_nonmember_fraction * s3))
    d_a = d1[rng.permutation(s1)[:n_a]]
    d_a_prime = d3[rng.permutation(s3)[:n_a_prime]]

    logger.info("allocated |D1|=%d |D2|=%d |D3|=%d |D_A|=%d |D'_A|=%d", s1, s2, s3, n_a, n_a_prime)
    return Splits(dataset, d1, d2, d3, d_a, d_a_prime, seed=seed, reference_size=sizes.reference_size)


def inversion_data(splits: Splits, seed: int = 0) -> tuple[LabeledDataset, InversionTestSet]:
    """
    Partition the splits for the inversion attack.

    The auxiliary set takes 80% of each of D1, D2 and D3; the remaining 20% of D1 and of D3 form the
    member and non-member test sets.

    Returns
    -------
    tuple[LabeledDataset, InversionTestSet]
        The auxiliary set and the tagged test set.
    """
    rng = derive_rng(seed, "inversion_data")
    auxiliary, held_out = [], {}
    for name in ("d1", "d2", "d3"):
        indices = getattr(splits, name)
        shuffled = indices[rng.permutation(indices.size)]
        cut = int(round(INVERSION_AUX_FRACTION * indices.size))
        auxiliary.append(shuffled[:cut])
        held_out[name] = shuffled[cut:]
    aux = splits.dataset.subset(np.concatenate(auxiliary))
    return aux, InversionTestSet(splits.dataset.subset(held_out["d1"]), splits.dataset.subset(held_out["d3"]))


# =============================================================================
# CSV
# =============================================================================


def save_csv(dataset: LabeledDataset, path: str | Path) -> Path:
    """Write ``dataset`` as ``label,f1,...,fd`` rows without a header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label), *(_format_value(v) for v in row)])
    return path


def _format_value(value: float) -> str:
    return str(int(value)) if value in (0.0, 1.0) else repr(float(value))


def load_csv(path: str | Path, num_classes: int | None = None) -> LabeledDataset:
    """
    Read a ``label,f1,...,fd`` file.

    Parameters
    ----------
    path :
        CSV file without a header.
    num_classes :
        Declared number of classes; inferred as ``max(label) + 1`` when ``None``.

    Raises
    ------
    CSVFormatError
        On a non-numeric value, a non-integer label or a row whose arity differs from the first row.
    LabelRangeError
        If a label is negative or not below ``num_classes``.
    EmptyDataError
        If the file holds no rows.
    """
    labels, rows = [], []
    width = None
    with Path(path).open(newline="") as handle:
        for line_number, record in enumerate(csv.reader(handle), start=1):
            if not record:
                raise CSVFormatError("empty row", line_number)
            if width is None:
                width = len(record)
                if width < 2:
                    raise CSVFormatError("a row needs a label and at least one feature", line_number)
            elif len(record) != width:
                raise CSVFormatError(f"expected {width} fields, found {len(record)}", line_number)
            try:
                label = int(record[0])
            except ValueError:
                raise CSVFormatError(f"label {record[0]!r} is not an integer", line_number) from None
            try:
                rows.append([float(v) for v in record[1:]])
            except ValueError as err:
                raise CSVFormatError(f"non-numeric feature ({err})", line_number) from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise LabelRangeError(f"line {line_number}: label {label} outside [0, {num_classes})")
            labels.append(label)

    if not labels:
        raise EmptyDataError(f"{path} contains no rows")
    k = num_classes if num_classes is not None else max(labels) + 1
    return LabeledDataset(np.asarray(rows), np.asarray(labels), k)


# =============================================================================
# Manifest
# =============================================================================


def write_manifest(path: str | Path, splits: Splits, source: SyntheticSpec | str) -> Path:
    """
    Record where the data came from and every split's indices as YAML.

    Parameters
    ----------
    path :
        Output file.
    splits :
        The allocation to record.
    source :
        The generator spec, or the path of an ingested CSV.
    """
    document: dict[str, Any] = {
        "source": source.get_dict() if isinstance(source, SyntheticSpec) else {"csv": str(source)},
        "num_classes": splits.dataset.num_classes,
        "num_samples": len(splits.dataset),
        "seed": splits.seed,
        "reference_size": splits.reference_size,
        "assumptions": IID_NOTE,
        "splits": {name: getattr(splits, name).tolist() for name in ("d1", "d2", "d3", "d_a", "d_a_prime")},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(document, sort_keys=False, default_flow_style=None, width=120))
    return path


def read_manifest(path: str | Path, base_dir: str | Path | None = None) -> Splits:
    """
    Rebuild :class:`Splits` from a manifest, regenerating or re-reading the dataset.

    Parameters
    ----------
    path :
        Manifest written by :func:`write_manifest`.
    base_dir :
        Directory relative CSV paths are resolved against; defaults to the manifest's directory.

    Raises
    ------
    ModelFormatError
        If the manifest lacks a field or its indices do not fit the dataset.
    """
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text())
        source = document["source"]
        if "csv" in source:
            csv_path = Path(source["csv"])
            if not csv_path.is_absolute():
                csv_path = Path(base_dir or path.parent) / csv_path
            dataset = load_csv(csv_path, document["num_classes"])
        else:
            dataset = generate_synthetic(SyntheticSpec.populate(source))
        parts = {
            name: np.asarray(document["splits"][name], dtype=np.int64)
            for name in ("d1", "d2", "d3", "d_a", "d_a_prime")
        }
        splits = Splits(dataset, seed=int(document["seed"]), reference_size=document.get("reference_size"), **parts)
    except (KeyError, TypeError, yaml.YAMLError) as err:
        raise ModelFormatError(f"{path}: malformed manifest ({err})") from err
    if any(part.size and part.max() >= len(dataset) for part in parts.values()):
        raise ModelFormatError(f"{path}: split indices exceed the dataset size {len(dataset)}")
    return splits

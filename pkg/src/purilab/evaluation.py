"""
purilab - metrics and reports.

Utility, membership and inversion metrics, the member/non-member histogram diagnostics and the
versioned :class:`EvaluationReport` with its comparison table.
"""

from __future__ import annotations

__all__ = [
    "InversionErrors",
    "Timing",
    "EvaluationReport",
    "confidence_distortion",
    "reconstruction_error",
    "inversion_error",
    "best_constant_error",
    "normalized_entropy",
    "correct_class_confidence",
    "histogram_gap",
    "membership_gaps",
    "assemble_report",
    "save_report",
    "load_report",
    "AttackResult",
    "save_attack_result",
    "load_attack_result",
    "compare_reports",
    "write_comparison_csv",
    "summarize_reports",
]

import csv
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .backend.CONSTANTS import ATTACK_KINDS, ATTACK_RESULT_FORMAT, FORMAT_VERSION, HISTOGRAM_BINS, REPORT_FORMAT
from .backend.error_handling import DataError, EmptyDataError, ModelFormatError, ShapeError
from .data import InversionTestSet, LabeledDataset
from .nn_core import loss_value
from .target import ConfidenceOracle

logger = logging.getLogger(__name__)


# =============================================================================
# Scalar metrics
# =============================================================================


def confidence_distortion(
    oracle_raw: ConfidenceOracle, oracle_defended: ConfidenceOracle, samples: np.ndarray | LabeledDataset
) -> float:
    """
    Mean L2 distance between raw and defended confidence vectors.

    Every vector sums to 1, so the distance is already relative to the total mass.

    Raises
    ------
    EmptyDataError
        If there are no samples.
    """
    x = samples.features if isinstance(samples, LabeledDataset) else np.atleast_2d(samples)
    if x.shape[0] == 0:
        raise EmptyDataError("distortion over an empty sample set is undefined")
    raw, defended = np.atleast_2d(oracle_raw.predict(x)), np.atleast_2d(oracle_defended.predict(x))
    if raw.shape != defended.shape:
        raise ShapeError(f"oracles disagree on k: {raw.shape[1]} vs {defended.shape[1]}")
    return float(np.mean(np.linalg.norm(raw - defended, axis=1)))


def reconstruction_error(reconstructed: np.ndarray, original: np.ndarray) -> float:
    """Squared error averaged over samples and feature dimensions."""
    return loss_value("mse", reconstructed, original)


@dataclass
class InversionErrors:
    """Per-tag and size-weighted inversion errors; a tag with no samples is ``None``."""

    members: float | None
    nonmembers: float | None
    overall: float


def inversion_error(inversion_model, oracle: ConfidenceOracle, test: InversionTestSet) -> InversionErrors:
    """
    Inversion error on the member and non-member test sets and overall.

    ``overall`` is the size-weighted mean of the two.

    Raises
    ------
    EmptyDataError
        If both test sets are empty.
    """
    sizes = (len(test.members), len(test.nonmembers))
    if sum(sizes) == 0:
        raise EmptyDataError("inversion test set is empty")
    errors: list[float | None] = []
    for part in (test.members, test.nonmembers):
        if len(part) == 0:
            errors.append(None)
            continue
        errors.append(reconstruction_error(inversion_model.invert(oracle, part.features), part.features))
    overall = sum(e * n for e, n in zip(errors, sizes) if e is not None) / sum(sizes)
    return InversionErrors(errors[0], errors[1], float(overall))


def best_constant_error(test: InversionTestSet) -> float:
    """Error of always answering the test set's mean feature vector; a floor for no-signal inversion."""
    features = np.concatenate([test.members.features, test.nonmembers.features])
    if features.shape[0] == 0:
        raise EmptyDataError("inversion test set is empty")
    return float(np.mean(features.var(axis=0)))


def normalized_entropy(conf: np.ndarray) -> np.ndarray | float:
    """
    Shannon entropy divided by ``log k``, with ``0 log 0 = 0``.

    Returns a float for one vector and an array for a matrix of vectors.
    """
    conf = np.asarray(conf, dtype=np.float64)
    k = conf.shape[-1]
    terms = np.where(conf > 0, conf * np.log(np.where(conf > 0, conf, 1.0)), 0.0)
    values = np.clip(-terms.sum(axis=-1) / np.log(k), 0.0, 1.0)
    return float(values) if conf.ndim == 1 else values


def correct_class_confidence(conf: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Probability each row assigns to its ground-truth label."""
    conf = np.atleast_2d(conf)
    return conf[np.arange(conf.shape[0]), np.asarray(labels)]


def histogram_gap(
    member_values: Sequence[float], nonmember_values: Sequence[float], bins: int = HISTOGRAM_BINS
) -> tuple[float, float]:
    """
    Largest and mean per-bin gap between two normalized histograms over ``[0, 1]``.

    Returns
    -------
    tuple[float, float]
        ``(max_gap, avg_gap)``, the average taken over bins.

    Raises
    ------
    EmptyDataError
        If either list is empty.
    """
    a, b = np.asarray(member_values, dtype=np.float64), np.asarray(nonmember_values, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyDataError("histogram gap needs values on both sides")
    freq_a = np.histogram(a, bins=bins, range=(0.0, 1.0))[0] / a.size
    freq_b = np.histogram(b, bins=bins, range=(0.0, 1.0))[0] / b.size
    gap = np.abs(freq_a - freq_b)
    return float(gap.max()), float(gap.mean())


def membership_gaps(
    member_conf: np.ndarray,
    member_labels: np.ndarray,
    nonmember_conf: np.ndarray,
    nonmember_labels: np.ndarray,
    bins: int = HISTOGRAM_BINS,
) -> dict[str, float]:
    """Histogram gaps of the correct-class confidence and of the normalized entropy."""
    conf_max, conf_avg = histogram_gap(
        correct_class_confidence(member_conf, member_labels),
        correct_class_confidence(nonmember_conf, nonmember_labels),
        bins,
    )
    ent_max, ent_avg = histogram_gap(normalized_entropy(member_conf), normalized_entropy(nonmember_conf), bins)
    return {
        "confidence_gap_max": conf_max,
        "confidence_gap_avg": conf_avg,
        "entropy_gap_max": ent_max,
        "entropy_gap_avg": ent_avg,
    }


# =============================================================================
# Reports
# =============================================================================


@dataclass
class Timing:
    """Wall-clock measurements, stored beside the report rather than in it."""

    train_seconds: float | None = None
    query_seconds_raw: float | None = None
    query_seconds_defended: float | None = None

    @property
    def query_overhead(self) -> float | None:
        """Defended query time as a ratio of the bare oracle's."""
        if not self.query_seconds_raw or self.query_seconds_defended is None:
            return None
        return self.query_seconds_defended / self.query_seconds_raw

    def get_dict(self) -> dict[str, float | None]:
        return asdict(self) | {"query_overhead": self.query_overhead}


@dataclass
class EvaluationReport:
    """
    Every metric for one defense under one seed.

    A metric that was not computed is ``None`` and serializes as ``null``; it is never zero by default.
    """

    defense: str
    seed: int
    train_accuracy: float
    test_accuracy: float
    generalization_gap: float
    label_estimate: float
    confidence_distortion: float | None = None
    inversion_error_members: float | None = None
    inversion_error_nonmembers: float | None = None
    inversion_error_overall: float | None = None
    inversion_error_baseline: float | None = None
    inference_accuracy: dict[str, float | None] = field(default_factory=dict)
    dispersion_before: float | None = None
    dispersion_after: float | None = None
    confidence_gap_max: float | None = None
    confidence_gap_avg: float | None = None
    entropy_gap_max: float | None = None
    entropy_gap_avg: float | None = None
    histogram_bins: int = HISTOGRAM_BINS
    reference_exposure: dict[str, float | None] | None = None
    split_digest: str | None = None

    def to_dict(self) -> dict[str, Any]:
        """Header plus fields in declaration order."""
        return {"format": REPORT_FORMAT, "version": FORMAT_VERSION} | {
            f.name: getattr(self, f.name) for f in fields(self)
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> "EvaluationReport":
        """
        Rebuild a report.

        Raises
        ------
        ModelFormatError
            On a wrong format tag, an unknown version or missing fields.
        """
        if document.get("format") != REPORT_FORMAT or document.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"not a {REPORT_FORMAT} v{FORMAT_VERSION} document")
        names = {f.name for f in fields(cls)}
        try:
            return cls(**{k: v for k, v in document.items() if k in names})
        except TypeError as err:
            raise ModelFormatError(f"incomplete report: {err}") from err

    def metric(self, name: str) -> float | None:
        """A flat metric by name; ``inference:<kind>`` reaches into the attack table."""
        if name.startswith("inference:"):
            return self.inference_accuracy.get(name.split(":", 1)[1])
        return getattr(self, name)


def _check_fraction(name: str, value: float | None) -> None:
    if value is not None and not (0.0 <= value <= 1.0):
        raise DataError(f"{name}={value} is not a fraction")


def assemble_report(
    defense: str,
    seed: int,
    train_accuracy: float,
    test_accuracy: float,
    confidence_distortion: float | None = None,
    inversion: InversionErrors | None = None,
    inversion_baseline: float | None = None,
    inference_accuracy: Mapping[str, float | None] | None = None,
    dispersion_before: float | None = None,
    dispersion_after: float | None = None,
    gaps: Mapping[str, float] | None = None,
    histogram_bins: int = HISTOGRAM_BINS,
    reference_exposure: Mapping[str, float | None] | None = None,
    split_digests: Sequence[str] = (),
) -> EvaluationReport:
    """
    Collect the computed metrics into a report and derive ``g`` and the label estimate ``0.5 + g/2``.

    Attacks that were not run appear in ``inference_accuracy`` as ``None``.

    Parameters
    ----------
    split_digests :
        Fingerprints of the split manifests each input was computed on; they must all agree.

    Raises
    ------
    DataError
        If the split digests disagree or a fraction lies outside ``[0, 1]``.
    """
    if len(set(split_digests)) > 1:
        raise DataError(f"metrics were computed on different splits: {sorted(set(split_digests))}")
    inference = {kind: None for kind in ATTACK_KINDS if kind != "inversion"}
    inference.update(inference_accuracy or {})
    for name, value in [("train_accuracy", train_accuracy), ("test_accuracy", test_accuracy), *inference.items()]:
        _check_fraction(name, value)

    gap = train_accuracy - test_accuracy
    gaps = dict(gaps or {})
    return EvaluationReport(
        defense=defense,
        seed=seed,
        train_accuracy=train_accuracy,
        test_accuracy=test_accuracy,
        generalization_gap=gap,
        label_estimate=0.5 + gap / 2.0,
        confidence_distortion=confidence_distortion,
        inversion_error_members=inversion.members if inversion else None,
        inversion_error_nonmembers=inversion.nonmembers if inversion else None,
        inversion_error_overall=inversion.overall if inversion else None,
        inversion_error_baseline=inversion_baseline,
        inference_accuracy=inference,
        dispersion_before=dispersion_before,
        dispersion_after=dispersion_after,
        confidence_gap_max=gaps.get("confidence_gap_max"),
        confidence_gap_avg=gaps.get("confidence_gap_avg"),
        entropy_gap_max=gaps.get("entropy_gap_max"),
        entropy_gap_avg=gaps.get("entropy_gap_avg"),
        histogram_bins=histogram_bins,
        reference_exposure=dict(reference_exposure) if reference_exposure is not None else None,
        split_digest=split_digests[0] if split_digests else None,
    )


def save_report(report: EvaluationReport, path: str | Path, timing: Timing | None = None) -> Path:
    """Write the report JSON and, when given, ``timing.json`` beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json())
    if timing is not None:
        (path.parent / "timing.json").write_text(json.dumps(timing.get_dict(), indent=2) + "\n")
    return path


def load_report(path: str | Path) -> EvaluationReport:
    try:
        return EvaluationReport.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as err:
        raise ModelFormatError(f"{path}: not valid JSON ({err})") from err


@dataclass
class AttackResult:
    """
    Outcome of one attack against one oracle, as written by ``purilab attack``.

    Membership attacks fill ``inference_accuracy``; the inversion attack fills the three error fields.
    """

    attack: str
    defense: str
    seed: int
    inference_accuracy: float | None = None
    inversion_error_members: float | None = None
    inversion_error_nonmembers: float | None = None
    inversion_error_overall: float | None = None
    split_digest: str | None = None

    def __post_init__(self):
        if self.attack not in ATTACK_KINDS:
            raise DataError(f"unknown attack {self.attack!r}; expected one of {ATTACK_KINDS}")

    @classmethod
    def from_inversion(
        cls, errors: InversionErrors, defense: str, seed: int, split_digest: str | None = None
    ) -> "AttackResult":
        return cls(
            "inversion",
            defense,
            seed,
            inversion_error_members=errors.members,
            inversion_error_nonmembers=errors.nonmembers,
            inversion_error_overall=errors.overall,
            split_digest=split_digest,
        )

    def to_dict(self) -> dict[str, Any]:
        return {"format": ATTACK_RESULT_FORMAT, "version": FORMAT_VERSION} | asdict(self)


def save_attack_result(result: AttackResult, path: str | Path) -> Path:
    """Write ``result`` as JSON with the format header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    return path


def load_attack_result(path: str | Path) -> AttackResult:
    """
    Read a result written by :func:`save_attack_result`.

    Raises
    ------
    ModelFormatError
        On invalid JSON, a wrong format tag or version, or missing fields.
    """
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ModelFormatError(f"{path}: not valid JSON ({err})") from err
    if document.get("format") != ATTACK_RESULT_FORMAT or document.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: not a {ATTACK_RESULT_FORMAT} v{FORMAT_VERSION} document")
    names = {f.name for f in fields(AttackResult)}
    try:
        return AttackResult(**{k: v for k, v in document.items() if k in names})
    except TypeError as err:
        raise ModelFormatError(f"incomplete attack result: {err}") from err


# =============================================================================
# Comparison
# =============================================================================

COMPARISON_COLUMNS = (
    ("train acc", "train_accuracy"),
    ("test acc", "test_accuracy"),
    ("distortion", "confidence_distortion"),
    ("inv err (mem)", "inversion_error_members"),
    ("inv err (non)", "inversion_error_nonmembers"),
    ("inv err", "inversion_error_overall"),
    ("Mlleaks", "inference:mlleaks"),
    ("Mlleaks-a", "inference:mlleaks-a"),
    ("NSH", "inference:nsh"),
    ("Label", "inference:label"),
    ("0.5+g/2", "label_estimate"),
)


def _comparison_rows(reports: Sequence[EvaluationReport]) -> list[list[Any]]:
    return [[r.defense, r.seed, *(r.metric(key) for _, key in COMPARISON_COLUMNS)] for r in reports]


def compare_reports(reports: Sequence[EvaluationReport]) -> str:
    """A fixed-width table with one row per report: utility, inversion error and inference accuracy."""
    header = ["defense", "seed", *(title for title, _ in COMPARISON_COLUMNS)]
    body = [
        [str(row[0]), str(row[1]), *("-" if v is None else f"{v:.4f}" for v in row[2:])]
        for row in _comparison_rows(reports)
    ]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)) for line in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_comparison_csv(reports: Sequence[EvaluationReport], path: str | Path) -> Path:
    """CSV export of :func:`compare_reports` with full-precision values and empty cells for absent metrics."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["defense", "seed", *(key for _, key in COMPARISON_COLUMNS)])
        for row in _comparison_rows(reports):
            writer.writerow(["" if v is None else v for v in row])
    return path


def summarize_reports(reports: Sequence[EvaluationReport]) -> list[dict[str, Any]]:
    """
    Per-defense means over seeds of every numeric metric.

    Absent metrics are skipped rather than averaged as zero; a metric absent for every seed stays ``None``.
    """
    keys = [key for _, key in COMPARISON_COLUMNS] + [
        "generalization_gap",
        "dispersion_before",
        "dispersion_after",
        "confidence_gap_max",
        "confidence_gap_avg",
        "entropy_gap_max",
        "entropy_gap_avg",
    ]
    grouped: dict[str, list[EvaluationReport]] = {}
    for report in reports:
        grouped.setdefault(report.defense, []).append(report)
    summary = []
    for defense, group in grouped.items():
        row: dict[str, Any] = {"defense": defense, "seeds": len(group)}
        for key in keys:
            values = [v for v in (r.metric(key) for r in group) if v is not None]
            row[key] = float(np.mean(values)) if values else None
        summary.append(row)
    return summary

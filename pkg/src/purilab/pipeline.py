"""
purilab - experiment pipeline.

Runs data generation, target training, purifier training, attacks and evaluation for every seed
and defense of an :class:`ExperimentConfig`, persisting and checksumming each stage's outputs.
"""

from __future__ import annotations

__all__ = [
    "RunResult",
    "load_config",
    "validate_config",
    "config_hash",
    "experiment_dir",
    "write_normalized_config",
    "SeedContext",
    "prepare_splits",
    "manifest_digest",
    "make_context",
    "build_defended_oracle",
    "run_attacks",
    "evaluate_defense",
    "run_pipeline",
    "run_tradeoff_sweep",
]

import csv
import hashlib
import logging
import time
import warnings
from collections.abc import Iterator, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .attacks import (
    MembershipAttackModel,
    evaluate_membership,
    mlleaks_adaptive,
    mlleaks_attack,
    nsh_attack,
    reference_exposure,
    train_inversion_attack,
)
from .backend.error_handling import ConfigurationError, GapWarning, PipelineError, PurilabError
from .backend.utilities import DefenseSpec, ExperimentConfig, HistogramConfig, PurifierHyper, SweepConfig
from .baselines import build_defense
from .data import (
    InversionTestSet,
    LabeledDataset,
    Splits,
    allocate,
    generate_synthetic,
    inversion_data,
    load_csv,
    write_manifest,
)
from .evaluation import (
    EvaluationReport,
    Timing,
    assemble_report,
    best_constant_error,
    confidence_distortion,
    correct_class_confidence,
    inversion_error,
    membership_gaps,
    normalized_entropy,
    reconstruction_error,
    save_report,
    summarize_reports,
    write_comparison_csv,
)
from .nn_core import Network, save_network
from .plotting import plot_membership_histograms, plot_tradeoff, save_figure
from .purifier import PurifierBundle, dispersion, reference_features, save_bundle, train_purifier
from .target import Oracle, accuracy, generalization_gap, train_target

logger = logging.getLogger(__name__)

NORMALIZED_CONFIG = "config.normalized.yaml"
CHECKSUMS = "checksums.yaml"


# =============================================================================
# Configuration
# =============================================================================


def load_config(path: str | Path) -> dict[str, Any]:
    """
    Read a YAML experiment file into a plain mapping.

    Raises
    ------
    ConfigurationError
        If the file is missing, unparsable or not a mapping.
    """
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text())
    except OSError as err:
        raise ConfigurationError(f"cannot read {path}: {err.strerror}") from err
    except yaml.YAMLError as err:
        raise ConfigurationError(f"{path} is not valid YAML: {err}") from err
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path} must hold a mapping at the top level")
    return document


def validate_config(
    path: str | Path, overrides: Mapping[str, Any] | None = None, write_echo: bool = True
) -> ExperimentConfig:
    """
    Load, default-fill and check an experiment file.

    Parameters
    ----------
    path :
        YAML experiment file. A relative ``dataset_path`` is resolved against its directory.
    overrides :
        Top-level fields replacing the file's values, e.g. ``{"seeds": [7]}`` from the command line.
    write_echo :
        Write the normalized configuration into the experiment directory.

    Returns
    -------
    ExperimentConfig
        The normalized configuration with every default explicit.

    Raises
    ------
    ConfigurationError
        Naming the field path of the first violation, including a ``dataset_path`` that does not exist.
    """
    path = Path(path)
    raw = load_config(path) | dict(overrides or {})
    config = ExperimentConfig.populate(raw)
    if config.dataset_path is not None:
        data_path = Path(config.dataset_path)
        if not data_path.is_absolute():
            data_path = path.parent / data_path
        if not data_path.is_file():
            raise ConfigurationError(f"file {data_path} does not exist", "dataset_path")
        config.dataset_path = str(data_path)
    if write_echo:
        write_normalized_config(config)
    return config


def _hashed_fields(config: ExperimentConfig) -> dict[str, Any]:
    document = config.get_dict()
    document.pop("output_dir")
    return document


def config_hash(config: ExperimentConfig) -> str:
    """First 12 hex digits of the SHA-256 of the normalized configuration, output location excluded."""
    text = yaml.safe_dump(_hashed_fields(config), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def experiment_dir(config: ExperimentConfig) -> Path:
    """``<output_dir>/<name>-<config hash>``."""
    return Path(config.output_dir) / f"{config.name}-{config_hash(config)}"


def write_normalized_config(config: ExperimentConfig) -> Path:
    """Write the normalized configuration echo into the experiment directory."""
    directory = experiment_dir(config)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / NORMALIZED_CONFIG
    path.write_text(yaml.safe_dump(config.get_dict(), sort_keys=False))
    return path


# =============================================================================
# Bookkeeping
# =============================================================================


class Checksums:
    """SHA-256 ledger of every file a run writes, relative to the experiment directory."""

    def __init__(self, root: Path):
        self.root = root
        self.entries: dict[str, str] = {}

    def record(self, path: Path) -> Path:
        targets = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for target in targets:
            self.entries[target.relative_to(self.root).as_posix()] = hashlib.sha256(target.read_bytes()).hexdigest()
        return path

    def write(self) -> Path:
        path = self.root / CHECKSUMS
        path.write_text(yaml.safe_dump(dict(sorted(self.entries.items())), sort_keys=False))
        return path


@contextmanager
def stage(name: str, detail: str = "") -> Iterator[None]:
    """Log a stage's start and elapsed time and tag any failure with the stage name."""
    start = time.perf_counter()
    logger.info("[%s] start %s", name, detail)
    try:
        yield
    except PipelineError:
        raise
    except (PurilabError, OSError, ValueError, FloatingPointError) as err:
        logger.error("[%s] failed after %.1fs: %s", name, time.perf_counter() - start, err)
        raise PipelineError(name, err) from err
    logger.info("[%s] done in %.1fs %s", name, time.perf_counter() - start, detail)


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label).strip("_")


# =============================================================================
# Stages
# =============================================================================


@dataclass
class SeedContext:
    """Everything a seed's defenses share: the splits, the trained target and the inversion partition."""

    seed: int
    splits: Splits
    target: Network
    auxiliary: LabeledDataset
    inversion_test: InversionTestSet
    split_digest: str
    directory: Path
    cached_attacks: dict[str, MembershipAttackModel] = field(default_factory=dict)


def prepare_splits(config: ExperimentConfig, seed: int) -> Splits:
    """Generate or load the dataset and allocate it with ``seed``."""
    if config.dataset_path is not None:
        dataset = load_csv(config.dataset_path)
    else:
        dataset = generate_synthetic(config.dataset)
    return allocate(dataset, config.allocation, seed)


def _prepare_seed(config: ExperimentConfig, seed: int, root: Path, ledger: Checksums) -> SeedContext:
    directory = root / f"seed-{seed}"
    with stage("gen-data", f"seed={seed}"):
        splits = prepare_splits(config, seed)
        manifest = write_manifest(directory / "data" / "manifest.yaml", splits, config.dataset_path or config.dataset)
        ledger.record(manifest)
        digest = manifest_digest(manifest)

    with stage("train-target", f"seed={seed}"):
        target = train_target(splits.train, replace(config.target, seed=seed), eval_set=splits.test)
        ledger.record(save_network(target, directory / "target" / "F.json"))
        with warnings.catch_warnings():
            warnings.simplefilter("always", GapWarning)
            train_acc, test_acc, gap = generalization_gap(Oracle(target), splits.train, splits.test)
        logger.info("seed %d target: train %.4f test %.4f gap %.4f", seed, train_acc, test_acc, gap)

    return make_context(splits, target, digest, directory)


def manifest_digest(path: str | Path) -> str:
    """Short SHA-256 fingerprint of a split manifest, used to check that metrics share their splits."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def make_context(splits: Splits, target: Network, split_digest: str, directory: str | Path) -> SeedContext:
    """Bundle a trained target with its splits; the seed is the one the splits were allocated with."""
    auxiliary, inversion_test = inversion_data(splits, splits.seed)
    return SeedContext(splits.seed, splits, target, auxiliary, inversion_test, split_digest, Path(directory))


def build_defended_oracle(
    target: Network, spec: DefenseSpec, splits: Splits, seed: int
) -> tuple[Oracle, PurifierBundle | None]:
    """
    Wrap ``target`` in the defense ``spec`` describes, training a purifier first when needed.

    The purifier's inputs are picked by its ``reference`` setting; random noise is seeded from ``seed``.
    """
    bundle = None
    if spec.kind == "purifier":
        hyper = spec.purifier or PurifierHyper()
        bundle = train_purifier(target, reference_features(splits, hyper.reference, seed), hyper, seed)
    return Oracle(target, build_defense(replace(spec, seed=seed), bundle)), bundle


def run_attacks(
    oracle: Oracle,
    spec: DefenseSpec,
    context: SeedContext,
    config: ExperimentConfig,
) -> tuple[dict[str, float], Any, dict[str, float | None] | None]:
    """
    Train every configured attack against ``oracle`` and measure it on the held-out evaluation sets.

    The plain shadow-model attack never queries the oracle while training, so it is trained once
    per seed and reused across defenses.

    Returns
    -------
    tuple
        Inference accuracy per membership attack, the :class:`InversionErrors` (or ``None``) and the
        reference-exposure table (or ``None`` when disabled).
    """
    splits, seed = context.splits, context.seed
    members, nonmembers = splits.eval_members, splits.eval_nonmembers
    trained: dict[str, MembershipAttackModel] = {}
    inference: dict[str, float] = {}
    inversion, inversion_model = None, None

    for kind in config.attacks:
        with stage(f"attack:{kind}", f"seed={seed} defense={oracle.label}"):
            if kind == "mlleaks":
                if "mlleaks" not in context.cached_attacks:
                    context.cached_attacks["mlleaks"] = mlleaks_attack(
                        oracle, splits.attacker_view(False), config.target, config.attack, seed
                    )
                trained[kind] = context.cached_attacks["mlleaks"]
            elif kind == "mlleaks-a":
                trained[kind] = mlleaks_adaptive(
                    oracle, splits.attacker_view(False), splits.reference, config.target, config.attack, seed, spec
                )
            elif kind == "nsh":
                trained[kind] = nsh_attack(oracle, splits.attacker_view(True), config.attack, seed)
            elif kind == "label":
                trained[kind] = MembershipAttackModel("label")
            else:
                inversion_model = train_inversion_attack(oracle, context.auxiliary, config.attack, seed)
                inversion = inversion_error(inversion_model, oracle, context.inversion_test)
            if kind in trained:
                inference[kind] = evaluate_membership(trained[kind], oracle, members, nonmembers)
                logger.info("%s accuracy %.4f against %s", kind, inference[kind], oracle.label)

    exposure = None
    if config.reference_exposure:
        reference = splits.reference
        exposure = {kind: reference_exposure(attack, oracle, reference, nonmembers) for kind, attack in trained.items()}
        if inversion_model is not None:
            exposure["inversion"] = reconstruction_error(
                inversion_model.invert(oracle, reference.features), reference.features
            )
    return inference, inversion, exposure


def _query_seconds(oracle: Oracle, features: np.ndarray) -> float:
    start = time.perf_counter()
    oracle.predict(features)
    return (time.perf_counter() - start) / max(len(features), 1)


def evaluate_defense(
    spec: DefenseSpec,
    context: SeedContext,
    config: ExperimentConfig,
    ledger: Checksums | None = None,
    bundle: PurifierBundle | None = None,
) -> tuple[EvaluationReport, Timing]:
    """
    Train the defense, attack it and assemble its report for one seed.

    With a ``ledger``, writes the purifier bundle, the report, ``timing.json`` and both membership
    histograms under ``<seed dir>/<defense>/`` and records them.

    Parameters
    ----------
    bundle :
        An already trained purifier to deploy instead of training one from ``spec``.
    """
    splits, seed = context.splits, context.seed
    directory = context.directory / _slug(spec.label)

    with stage("train-purifier" if spec.kind == "purifier" else "build-defense", spec.label):
        if bundle is not None:
            oracle = Oracle(context.target, build_defense(replace(spec, seed=seed), bundle))
        else:
            oracle, bundle = build_defended_oracle(context.target, spec, splits, seed)
        if bundle is not None and ledger is not None:
            ledger.record(save_bundle(bundle, directory / "purifier"))

    inference, inversion, exposure = run_attacks(oracle, spec, context, config)

    with stage("evaluate", f"seed={seed} defense={spec.label}"):
        raw = oracle.raw()
        test, members, nonmembers = splits.test, splits.eval_members, splits.eval_nonmembers
        raw_conf, defended_conf = raw.predict(test.features), oracle.predict(test.features)
        member_conf, nonmember_conf = oracle.predict(members.features), oracle.predict(nonmembers.features)
        report = assemble_report(
            defense=spec.label,
            seed=seed,
            train_accuracy=accuracy(oracle, splits.train),
            test_accuracy=accuracy(oracle, test),
            confidence_distortion=confidence_distortion(raw, oracle, test),
            inversion=inversion,
            inversion_baseline=best_constant_error(context.inversion_test) if inversion is not None else None,
            inference_accuracy=inference,
            dispersion_before=dispersion(raw_conf),
            dispersion_after=dispersion(defended_conf),
            gaps=membership_gaps(
                member_conf, members.labels, nonmember_conf, nonmembers.labels, config.histogram_bins
            ),
            histogram_bins=config.histogram_bins,
            reference_exposure=exposure,
            split_digests=[context.split_digest],
        )
        timing = Timing(
            train_seconds=bundle.train_seconds if bundle is not None else None,
            query_seconds_raw=_query_seconds(raw, test.features),
            query_seconds_defended=_query_seconds(oracle, test.features),
        )
        if ledger is not None:
            ledger.record(save_report(report, directory / "report.json", timing))
            ledger.record(directory / "timing.json")
            _save_histograms(member_conf, members.labels, nonmember_conf, nonmembers.labels, spec, config, directory)
            ledger.record(directory / "figures")
    return report, timing


def _save_histograms(member_conf, member_labels, nonmember_conf, nonmember_labels, spec, config, directory) -> None:
    hist_config = HistogramConfig(bins=config.histogram_bins)
    quantities = [
        (
            "confidence",
            "confidence in the correct class",
            correct_class_confidence(member_conf, member_labels),
            correct_class_confidence(nonmember_conf, nonmember_labels),
        ),
        ("entropy", "normalized entropy", normalized_entropy(member_conf), normalized_entropy(nonmember_conf)),
    ]
    for name, x_label, on_members, on_nonmembers in quantities:
        axis = plot_membership_histograms(
            on_members, on_nonmembers, x_label=x_label, plot_title=spec.label, hist_config=hist_config
        )
        save_figure(axis.figure, directory / "figures" / f"hist_{name}.png")


# =============================================================================
# Drivers
# =============================================================================


@dataclass
class RunResult:
    """Where a run wrote its outputs and the reports it produced, ordered by seed then defense."""

    directory: Path
    reports: list[EvaluationReport]
    timings: list[Timing]


def _write_summary(reports: Sequence[EvaluationReport], path: Path) -> Path:
    rows = summarize_reports(reports)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return path


def run_pipeline(config: ExperimentConfig, overwrite: bool = False) -> RunResult:
    """
    Run the full experiment for every seed and defense.

    Parameters
    ----------
    config :
        A validated experiment configuration.
    overwrite :
        Allow writing into an experiment directory that already holds a finished run.

    Returns
    -------
    RunResult
        The experiment directory, reports and timings.

    Raises
    ------
    PipelineError
        Tagged with the failing stage; outputs written before the failure are kept.
    """
    root = experiment_dir(config)
    if (root / CHECKSUMS).exists() and not overwrite:
        raise PipelineError("setup", f"{root} already holds a finished run")
    ledger = Checksums(root)
    ledger.record(write_normalized_config(config))
    logger.info(
        "experiment %s: %d seed(s), %d defense(s) -> %s", config.name, len(config.seeds), len(config.defenses), root
    )

    reports, timings = [], []
    for seed in config.seeds:
        context = _prepare_seed(config, seed, root, ledger)
        for spec in config.defenses:
            report, timing = evaluate_defense(spec, context, config, ledger)
            reports.append(report)
            timings.append(timing)

    with stage("report"):
        ledger.record(write_comparison_csv(reports, root / "comparison.csv"))
        ledger.record(_write_summary(reports, root / "summary.csv"))
        ledger.write()
    return RunResult(root, reports, timings)


def _sweep_defenses(config: ExperimentConfig, sweep: SweepConfig) -> list[DefenseSpec]:
    template = next((d.purifier for d in config.defenses if d.purifier is not None), None) or PurifierHyper()
    defenses = [DefenseSpec("none")]
    defenses += [DefenseSpec("purifier", purifier=hyper) for hyper in sweep.purifier_hypers(template)]
    defenses += [DefenseSpec("random_noise", magnitude=m) for m in sweep.noise_magnitudes]
    if sweep.include_one_hot:
        defenses.append(DefenseSpec("one_hot"))
    return defenses


TRADEOFF_FIELDS = (
    "family",
    "defense",
    "seeds",
    "test_accuracy",
    "confidence_distortion",
    "inversion_error",
    "nsh_accuracy",
)


def run_tradeoff_sweep(config: ExperimentConfig) -> tuple[Path, list[dict[str, Any]]]:
    """
    Evaluate every sweep point and draw the security-utility panels.

    Each point is attacked with the NSH and inversion attacks only; values are averaged over seeds.

    Returns
    -------
    tuple[Path, list[dict]]
        The path of ``tradeoff.csv`` and its rows.
    """
    sweep = config.sweep or SweepConfig()
    defenses = _sweep_defenses(config, sweep)
    sweep_config = replace(config, attacks=("nsh", "inversion"), reference_exposure=False, defenses=tuple(defenses))
    root = experiment_dir(config) / "sweep"
    ledger = Checksums(root)

    collected: dict[str, list[EvaluationReport]] = {spec.label: [] for spec in defenses}
    for seed in config.seeds:
        context = _prepare_seed(sweep_config, seed, root, ledger)
        for spec in defenses:
            report, _ = evaluate_defense(spec, context, sweep_config)
            collected[spec.label].append(report)

    rows = []
    for spec in defenses:
        group = collected[spec.label]
        rows.append(
            {
                "family": spec.kind,
                "defense": spec.label,
                "seeds": len(group),
                "test_accuracy": float(np.mean([r.test_accuracy for r in group])),
                "confidence_distortion": float(np.mean([r.confidence_distortion for r in group])),
                "inversion_error": float(np.mean([r.inversion_error_overall for r in group])),
                "nsh_accuracy": float(np.mean([r.inference_accuracy["nsh"] for r in group])),
            }
        )

    with stage("report", "trade-off"):
        path = root / "tradeoff.csv"
        with path.open("w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(TRADEOFF_FIELDS))
            writer.writeheader()
            writer.writerows(rows)
        fig, _ = plot_tradeoff(rows, plot_title=f"{config.name}: security vs utility")
        save_figure(fig, root / "tradeoff.png")
        ledger.record(path)
        ledger.record(root / "tradeoff.png")
        ledger.write()
    return path, rows

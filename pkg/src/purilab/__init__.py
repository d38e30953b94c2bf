"""
purilab - prediction purification laboratory.

Train a target classifier, defend its confidence scores with a learned purifier or a training-free
baseline, and measure what membership inference and model inversion attacks still recover.
"""

from .attacks import (
    InversionModel,
    MembershipAttackModel,
    evaluate_membership,
    label_attack,
    mlleaks_adaptive,
    mlleaks_attack,
    nsh_attack,
    reference_exposure,
    train_inversion_attack,
)
from .backend import (
    AllocationSpec,
    AttackConfig,
    DefenseSpec,
    ExperimentConfig,
    HistogramConfig,
    PurifierHyper,
    SeriesConfig,
    SweepConfig,
    SyntheticSpec,
    TargetConfig,
    base_purifier,
    bp,
    configure_logging,
    inversion_purifier,
    ip,
    joint_purifier,
    jp,
    membership_purifier,
    mp,
)
from .baselines import DefenseTransform, build_defense, one_hot, random_noise
from .data import LabeledDataset, Splits, allocate, generate_synthetic, inversion_data, load_csv, save_csv
from .evaluation import (
    EvaluationReport,
    assemble_report,
    compare_reports,
    confidence_distortion,
    histogram_gap,
    inversion_error,
    load_report,
    normalized_entropy,
    save_report,
)
from .pipeline import run_pipeline, run_tradeoff_sweep, validate_config
from .plotting import plot_membership_histograms, plot_tradeoff
from .purifier import PurifierBundle, dispersion, load_bundle, purify, save_bundle, train_purifier
from .target import Oracle, accuracy, generalization_gap, predict, train_target
from .version import __version__

__all__ = [
    # Data
    "LabeledDataset",
    "Splits",
    "generate_synthetic",
    "allocate",
    "inversion_data",
    "load_csv",
    "save_csv",
    # Target
    "Oracle",
    "train_target",
    "predict",
    "accuracy",
    "generalization_gap",
    # Defenses
    "PurifierBundle",
    "train_purifier",
    "purify",
    "dispersion",
    "save_bundle",
    "load_bundle",
    "DefenseTransform",
    "build_defense",
    "one_hot",
    "random_noise",
    # Attacks
    "MembershipAttackModel",
    "InversionModel",
    "mlleaks_attack",
    "mlleaks_adaptive",
    "nsh_attack",
    "label_attack",
    "train_inversion_attack",
    "evaluate_membership",
    "reference_exposure",
    # Evaluation
    "EvaluationReport",
    "confidence_distortion",
    "inversion_error",
    "normalized_entropy",
    "histogram_gap",
    "assemble_report",
    "save_report",
    "load_report",
    "compare_reports",
    # Plotting
    "plot_membership_histograms",
    "plot_tradeoff",
    # Pipeline
    "validate_config",
    "run_pipeline",
    "run_tradeoff_sweep",
    # Config classes
    "SyntheticSpec",
    "AllocationSpec",
    "TargetConfig",
    "PurifierHyper",
    "AttackConfig",
    "DefenseSpec",
    "SweepConfig",
    "ExperimentConfig",
    "HistogramConfig",
    "SeriesConfig",
    # Convenience / wrapper functions (long-form)
    "base_purifier",
    "inversion_purifier",
    "membership_purifier",
    "joint_purifier",
    # Convenience / wrapper functions (short aliases)
    "bp",
    "ip",
    "mp",
    "jp",
    "configure_logging",
    # Version
    "__version__",
]

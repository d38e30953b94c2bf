"""Created on Oct 19 13:28:41 2026."""

from ._wrappers import base_purifier, bp, inversion_purifier, ip, joint_purifier, jp, membership_purifier, mp
from .CONSTANTS import (
    ALLOCATION_ATTRS,
    ATTACK_ATTRS,
    ATTACK_KINDS,
    DEFENSE_ATTRS,
    DEFENSE_KINDS,
    HIST_ATTRS,
    PURIFIER_ATTRS,
    PURIFIER_MODES,
    REFERENCE_SOURCES,
    SERIES_ATTRS,
    SYNTHETIC_ATTRS,
    TARGET_ATTRS,
)
from .error_handling import (
    AttackError,
    ConfigurationError,
    CSVFormatError,
    DataError,
    DivergenceError,
    EmptyDataError,
    GapWarning,
    InsufficientDataError,
    LabelRangeError,
    LayerSpecError,
    MembershipLabelError,
    ModeError,
    ModelFormatError,
    NoiseFallbackWarning,
    NonFiniteError,
    NumericalError,
    PipelineError,
    PurilabError,
    ShapeError,
)
from .utilities import (
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
    configure_logging,
    derive_rng,
    infer_mode,
    stable_hash,
)

__all__ = [
    "bp",
    "ip",
    "mp",
    "jp",
    "base_purifier",
    "inversion_purifier",
    "membership_purifier",
    "joint_purifier",
    "ATTACK_KINDS",
    "DEFENSE_KINDS",
    "PURIFIER_MODES",
    "REFERENCE_SOURCES",
    "TARGET_ATTRS",
    "PURIFIER_ATTRS",
    "SYNTHETIC_ATTRS",
    "ALLOCATION_ATTRS",
    "ATTACK_ATTRS",
    "DEFENSE_ATTRS",
    "HIST_ATTRS",
    "SERIES_ATTRS",
    # Base errors
    "PurilabError",
    "DataError",
    "ConfigurationError",
    "NumericalError",
    "AttackError",
    "PipelineError",
    # Data errors
    "ShapeError",
    "EmptyDataError",
    "InsufficientDataError",
    "LabelRangeError",
    "CSVFormatError",
    "ModelFormatError",
    # Configuration errors
    "ModeError",
    "LayerSpecError",
    # Numerical and attack errors
    "NonFiniteError",
    "DivergenceError",
    "MembershipLabelError",
    # Warnings
    "NoiseFallbackWarning",
    "GapWarning",
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
    # Utilities
    "configure_logging",
    "derive_rng",
    "stable_hash",
    "infer_mode",
]

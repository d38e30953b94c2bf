"""
purilab Backend Utilities.

Configuration classes, seeded random streams and logging setup shared by every module.
"""

from __future__ import annotations

__all__ = [
    "SyntheticSpec",
    "AllocationSpec",
    "TargetConfig",
    "PurifierHyper",
    "AttackConfig",
    "DefenseSpec",
    "SweepConfig",
    "ExperimentConfig",
    "configure_logging",
    "derive_rng",
    "stable_hash",
    "infer_mode",
    "HistogramConfig",
    "SeriesConfig",
]

import logging
import zlib
from dataclasses import dataclass, field, fields
from typing import Any, Sequence

import numpy as np

from purilab.backend.CONSTANTS import (
    ACTIVATIONS,
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
from purilab.backend.error_handling import ConfigurationError, ModeError

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: int | str = logging.INFO) -> None:
    """
    Install a single stream handler on the ``purilab`` logger.

    Parameters
    ----------
    level :
        Logging level name or number. Calling this again only changes the level.
    """
    root = logging.getLogger("purilab")
    if not any(getattr(h, "_purilab", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._purilab = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)


def stable_hash(name: str) -> int:
    """Return a process-independent 32-bit hash of ``name``."""
    return zlib.crc32(name.encode("utf-8"))


def derive_rng(seed: int, *names: str) -> np.random.Generator:
    """
    Return a generator that depends only on ``seed`` and the component ``names``.

    Parameters
    ----------
    seed :
        The experiment seed.
    *names :
        Component path, e.g. ``("purifier", "G")``. Different paths give independent streams.

    Returns
    -------
    numpy.random.Generator
        A freshly seeded PCG64 generator.
    """
    return np.random.default_rng([int(seed), *(stable_hash(n) for n in names)])


def infer_mode(alpha: float, beta: float) -> str:
    """Return the smallest purifier mode that admits the given adversarial weights."""
    if alpha > 0 and beta > 0:
        return "both"
    if alpha > 0:
        return "inv"
    if beta > 0:
        return "mem"
    return "base"


def _populate(_class, dictionary: dict[str, Any] | None, mapping: dict[str, str], path: str):
    """
    Create a config dataclass instance from a dictionary, applying key aliases.

    Parameters
    ----------
    _class :
        The dataclass type to instantiate.
    dictionary :
        Raw parameter dictionary, possibly using shorthand keys.
    mapping :
        Alias-to-canonical-name mapping for shorthand keys.
    path :
        Dotted prefix used in error messages.

    Returns
    -------
    instance
        An instance of ``_class`` populated from the mapped dictionary.

    Raises
    ------
    ConfigurationError
        If a key does not name a field of ``_class``.
    """
    if dictionary is None:
        return _class()
    if not isinstance(dictionary, dict):
        raise ConfigurationError(f"expected a mapping, got {type(dictionary).__name__}", path or None)

    mapped = {mapping.get(k, k): v for k, v in dictionary.items()}
    known_fields = {f.name for f in fields(_class)}

    unknown = sorted(k for k in mapped if k not in known_fields)
    if unknown:
        raise ConfigurationError(f"unknown field(s) {', '.join(unknown)}", _join(path, unknown[0]))

    return _class(**mapped)


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def _require(condition: bool, message: str, path: str, name: str) -> None:
    if not condition:
        raise ConfigurationError(message, _join(path, name))


class _ConfigMixin:
    """Shared ``get_dict`` and pretty ``repr`` for config classes."""

    def get_dict(self) -> dict[str, Any]:
        """Get all parameters as a plain dictionary, nested configs included."""
        result = {}
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            if isinstance(value, _ConfigMixin):
                value = value.get_dict()
            elif isinstance(value, (list, tuple)):
                value = [v.get_dict() if isinstance(v, _ConfigMixin) else _plain(v) for v in value]
            result[f.name] = value
        return result

    def __repr__(self):
        """Pretty repr showing every parameter."""
        param_str = ", ".join(f"{k}={v!r}" for k, v in self.get_dict().items())
        return f"{self.__class__.__name__}({param_str})"


def _plain(value):
    return list(value) if isinstance(value, tuple) else value


@dataclass(repr=False)
class SyntheticSpec(_ConfigMixin):
    """Parameters of the prototype-plus-bit-flip dataset generator."""

    num_classes: int = 20
    feature_dim: int = 100
    samples_per_class: int = 300
    prototype_density: float = 0.5
    flip_noise: float = 0.33
    seed: int = 0

    @classmethod
    def populate(cls, dictionary: dict[str, Any] | None, path: str = "dataset") -> "SyntheticSpec":
        """Create a SyntheticSpec from a dictionary, using a mapping for shorthand keys."""
        return _populate(_class=cls, dictionary=dictionary, mapping=SYNTHETIC_ATTRS, path=path).validate(path)

    def validate(self, path: str = "dataset") -> "SyntheticSpec":
        """Check the invariants and return ``self``."""
        _require(self.num_classes >= 2, "needs at least 2 classes", path, "num_classes")
        _require(self.feature_dim >= 2, "needs at least 2 features", path, "feature_dim")
        _require(self.samples_per_class >= 1, "must be positive", path, "samples_per_class")
        _require(0.0 <= self.prototype_density <= 1.0, "must lie in [0, 1]", path, "prototype_density")
        _require(0.0 <= self.flip_noise <= 1.0, "must lie in [0, 1]", path, "flip_noise")
        return self


@dataclass(repr=False)
class AllocationSpec(_ConfigMixin):
    """
    Sizes of the D1/D2/D3 splits and of the attacker's subsets.

    ``None`` sizes split the dataset into equal thirds.
    """

    d1_size: int | None = None
    d2_size: int | None = None
    d3_size: int | None = None
    attacker_member_fraction: float = 0.5
    attacker_nonmember_fraction: float = 0.5
    reference_size: int | None = None

    @classmethod
    def populate(cls, dictionary: dict[str, Any] | None, path: str = "allocation") -> "AllocationSpec":
        """Create an AllocationSpec from a dictionary, using a mapping for shorthand keys."""
        return _populate(_class=cls, dictionary=dictionary, mapping=ALLOCATION_ATTRS, path=path).validate(path)

    def validate(self, path: str = "allocation") -> "AllocationSpec":
        """Check the invariants and return ``self``."""
        for name in ("d1_size", "d2_size", "d3_size", "reference_size"):
            value = getattr(self, name)
            _require(value is None or value >= 1, "must be positive", path, name)
        _require(0.0 < self.attacker_member_fraction <= 1.0, "must lie in (0, 1]", path, "attacker_member_fraction")
        _require(
            0.0 < self.attacker_nonmember_fraction <= 1.0, "must lie in (0, 1]", path, "attacker_nonmember_fraction"
        )
        return self

    def resolve(self, n: int) -> tuple[int, int, int]:
        """Return concrete ``(|D1|, |D2|, |D3|)`` for a dataset of ``n`` samples."""
        third = n // 3
        return (
            self.d1_size if self.d1_size is not None else third,
            self.d2_size if self.d2_size is not None else third,
            self.d3_size if self.d3_size is not None else third,
        )


@dataclass(repr=False)
class TargetConfig(_ConfigMixin):
    """Architecture and schedule of the target classifier (and of same-architecture shadow models)."""

    hidden_dims: Sequence[int] = (1024, 512, 256)
    activation: str = "tanh"
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 0.001
    l2_weight_decay: float = 0.0
    optimizer: str = "adam"
    seed: int = 0
    log_every: int = 10

    @classmethod
    def populate(cls, dictionary: dict[str, Any] | None, path: str = "target") -> "TargetConfig":
        """Create a TargetConfig from a dictionary, using a mapping for shorthand keys."""
        return _populate(_class=cls, dictionary=dictionary, mapping=TARGET_ATTRS, path=path).validate(path)

    def validate(self, path: str = "target") -> "TargetConfig":
        """Check the invariants and return ``self``."""
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        _require(len(self.hidden_dims) > 0, "must not be empty", path, "hidden_dims")
        _require(all(h >= 1 for h in self.hidden_dims), "widths must be positive", path, "hidden_dims")
        _require(self.activation in ACTIVATIONS and self.activation != "softmax", "invalid", path, "activation")
        _require(self.epochs >= 0, "must not be negative", path, "epochs")
        _require(self.batch_size >= 1, "must be positive", path, "batch_size")
        _require(self.learning_rate >= 0, "must not be negative", path, "learning_rate")
        _require(self.l2_weight_decay >= 0, "must not be negative", path, "l2_weight_decay")
        _require(self.optimizer in ("sgd", "adam"), "must be 'sgd' or 'adam'", path, "optimizer")
        return self


@dataclass(repr=False)
class PurifierHyper(_ConfigMixin):
    """
    Weights, mode and schedule of purifier training.

    ``lam`` weighs the label loss, ``alpha`` the adversarial inversion term and
    ``beta`` the discriminator term.
    """

    lam: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    mode: str = "base"
    epochs: int = 50
    batch_size: int = 128
    lr_generator: float = 0.0001
    lr_adversary: float = 0.0002
    lr_discriminator: float = 0.0002
    reference: str = "d2"
    log_every: int = 10

    @classmethod
    def populate(cls, dictionary: dict[str, Any] | None, path: str = "purifier") -> "PurifierHyper":
        """Create a PurifierHyper from a dictionary, using a mapping for shorthand keys."""
        return _populate(_class=cls, dictionary=dictionary, mapping=PURIFIER_ATTRS, path=path).validate(path)

    def validate(self, path: str = "purifier") -> "PurifierHyper":
        """
        Check the invariants and return ``self``.

        Raises
        ------
        ModeError
            If ``alpha``/``beta`` are nonzero for a mode that excludes them.
        ConfigurationError
            For any other invalid field.
        """
        _require(self.mode in PURIFIER_MODES, f"must be one of {PURIFIER_MODES}", path, "mode")
        for name in ("lam", "alpha", "beta", "lr_generator", "lr_adversary", "lr_discriminator"):
            _require(getattr(self, name) >= 0, "must not be negative", path, name)
        if self.alpha > 0 and self.mode in ("base", "mem"):
            raise ModeError(f"alpha={self.alpha} is not allowed in mode '{self.mode}'", _join(path, "alpha"))
        if self.beta > 0 and self.mode in ("base", "inv"):
            raise ModeError(f"beta={self.beta} is not allowed in mode '{self.mode}'", _join(path, "beta"))
        _require(self.epochs >= 0, "must not be negative", path, "epochs")
        _require(self.batch_size >= 1, "must be positive", path, "batch_size")
        _require(self.reference in REFERENCE_SOURCES, f"must be one of {REFERENCE_SOURCES}", path, "reference")
        return self

    @property
    def uses_adversary(self) -> bool:
        """Whether this mode trains the adversarial inversion model H."""
        return self.mode in ("inv", "both")

    @property
    def uses_discriminator(self) -> bool:
        """Whether this mode trains the discriminator I."""
        return self.mode in ("mem", "both")

    @property
    def label(self) -> str:
        """Short identifier, e.g. ``purifier-both(1,0.1,5)``."""
        return f"purifier-{self.mode}({self.lam:g},{self.alpha:g},{self.beta:g})"


@dataclass(repr=False)
class AttackConfig(_ConfigMixin):
    """Attack-model architectures and schedules."""

    attack_hidden: int = 128
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 0.001
    mlleaks_top_k: int | None = None
    nsh_epochs: int = 50
    nsh_learning_rate: float = 0.001
    inversion_epochs: int = 50
    inversion_batch_size: int = 128
    inversion_learning_rate: float = 0.0002
    adaptive_surrogate: str = "base"
    adaptive_knows_hyper: bool = True
    log_every: int = 10

    @classmethod
    def populate(cls, dictionary: dict[str, Any] | None, path: str = "attack") -> "AttackConfig":
        """Create an AttackConfig from a dictionary, using a mapping for shorthand keys."""
        return _populate(_class=cls, dictionary=dictionary, mapping=ATTACK_ATTRS, path=path).validate(path)

    def validate(self, path: str = "attack") -> "AttackConfig":
        """Check the invariants and return ``self``."""
        _require(self.attack_hidden >= 1, "must be positive", path, "attack_hidden")
        _require(self.mlleaks_top_k is None or self.mlleaks_top_k >= 1, "must be positive", path, "mlleaks_top_k")
        _require(
            self.adaptive_surrogate in ("base", "defender"), "must be 'base' or 'defender'", path, "adaptive_surrogate"
        )
        for name in ("epochs", "nsh_epochs", "inversion_epochs"):
            _require(getattr(self, name) >= 0, "must not be negative", path, name)
        for name in ("batch_size", "inversion_batch_size"):
            _require(getattr(self, name) >= 1, "must be positive", path, name)
        return self


@dataclass(repr=False)
class DefenseSpec(_ConfigMixin):
    """One defense applied on top of the target classifier."""

    kind: str = "none"
    magnitude: float = 0.0
    seed: int = 0
    purifier: PurifierHyper | None = None

    @classmethod
    def populate(cls, dictionary: dict[str, Any] | None, path: str = "defense") -> "DefenseSpec":
        """Create a DefenseSpec from a dictionary; a nested ``purifier`` mapping becomes a PurifierHyper."""
        raw = dict(dictionary or {})
        purifier = raw.pop("purifier", None)
        spec = _populate(_class=cls, dictionary=raw, mapping=DEFENSE_ATTRS, path=path)
        if purifier is not None:
            spec.purifier = PurifierHyper.populate(purifier, _join(path, "purifier"))
        return spec.validate(path)

    def validate(self, path: str = "defense") -> "DefenseSpec":
        """Check the invariants and return ``self``."""
        _require(self.kind in DEFENSE_KINDS, f"must be one of {DEFENSE_KINDS}", path, "kind")
        _require(0.0 <= self.magnitude <= 1.0, "must lie in [0, 1]", path, "magnitude")
        if self.kind == "purifier" and self.purifier is None:
            self.purifier = PurifierHyper()
        _require(
            self.kind == "purifier" or self.purifier is None, "only a purifier defense takes one", path, "purifier"
        )
        return self

    @property
    def label(self) -> str:
        """Identifier used as the report's defense id."""
        if self.kind == "random_noise":
            return f"random_noise({self.magnitude:g})"
        if self.kind == "purifier":
            return self.purifier.label  # type: ignore[union-attr]
        return self.kind


@dataclass(repr=False)
class SweepConfig(_ConfigMixin):
    """Grid of defense settings for the security-utility trade-off curves."""

    purifier_points: Sequence[Sequence[float]] = ((1.0, 0.0, 0.0), (1.0, 0.1, 0.0), (1.0, 0.0, 5.0), (1.0, 0.1, 5.0))
    noise_magnitudes: Sequence[float] = (0.1, 0.3, 0.5, 1.0)
    include_one_hot: bool = True

    @classmethod
    def populate(cls, dictionary: dict[str, Any] | None, path: str = "sweep") -> "SweepConfig":
        """Create a SweepConfig from a dictionary."""
        return _populate(_class=cls, dictionary=dictionary, mapping={}, path=path).validate(path)

    def validate(self, path: str = "sweep") -> "SweepConfig":
        """Check the invariants and return ``self``."""
        self.purifier_points = tuple(tuple(float(v) for v in p) for p in self.purifier_points)
        self.noise_magnitudes = tuple(float(m) for m in self.noise_magnitudes)
        _require(all(len(p) == 3 for p in self.purifier_points), "points are (lambda, alpha, beta)", path, "points")
        _require(all(min(p) >= 0 for p in self.purifier_points), "weights must not be negative", path, "points")
        _require(all(0 <= m <= 1 for m in self.noise_magnitudes), "must lie in [0, 1]", path, "noise_magnitudes")
        return self

    def purifier_hypers(self, template: PurifierHyper) -> list[PurifierHyper]:
        """Expand the grid into validated hyperparameter sets sharing ``template``'s schedule."""
        hypers = []
        for lam, alpha, beta in self.purifier_points:
            values = template.get_dict() | {"lam": lam, "alpha": alpha, "beta": beta, "mode": infer_mode(alpha, beta)}
            hypers.append(PurifierHyper(**values).validate())
        return hypers


def _default_defenses() -> list[DefenseSpec]:
    return [
        DefenseSpec("none"),
        DefenseSpec("one_hot"),
        DefenseSpec("random_noise", magnitude=0.3),
        DefenseSpec("purifier", purifier=PurifierHyper(mode="base")),
        DefenseSpec("purifier", purifier=PurifierHyper(alpha=0.1, mode="inv")),
        DefenseSpec("purifier", purifier=PurifierHyper(beta=5.0, mode="mem")),
        DefenseSpec("purifier", purifier=PurifierHyper(alpha=0.1, beta=5.0, mode="both")),
    ]


@dataclass(repr=False)
class ExperimentConfig(_ConfigMixin):
    """
    A full experiment: data, target, defenses, attacks and seeds.

    ``seeds`` has no default; every run must say which seeds it uses.
    """

    seeds: Sequence[int] = field(default_factory=tuple)
    name: str = "experiment"
    dataset: SyntheticSpec = field(default_factory=SyntheticSpec)
    dataset_path: str | None = None
    allocation: AllocationSpec = field(default_factory=AllocationSpec)
    target: TargetConfig = field(default_factory=TargetConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defenses: Sequence[DefenseSpec] = field(default_factory=_default_defenses)
    attacks: Sequence[str] = ATTACK_KINDS
    output_dir: str = "runs"
    reference_exposure: bool = False
    histogram_bins: int = 20
    sweep: SweepConfig | None = None

    @classmethod
    def populate(cls, dictionary: dict[str, Any] | None, path: str = "") -> "ExperimentConfig":
        """
        Create an ExperimentConfig from a (YAML-loaded) dictionary.

        Raises
        ------
        ConfigurationError
            Naming the dotted field path of the first violation found.
        """
        raw = dict(dictionary or {})
        if "seeds" not in raw and "seed" not in raw:
            raise ConfigurationError("is required (no implicit seeding)", _join(path, "seeds"))
        if "seed" in raw:
            raw["seeds"] = [raw.pop("seed")]

        nested = {
            "dataset": SyntheticSpec.populate(raw.pop("dataset", None), _join(path, "dataset")),
            "allocation": AllocationSpec.populate(raw.pop("allocation", None), _join(path, "allocation")),
            "target": TargetConfig.populate(raw.pop("target", None), _join(path, "target")),
            "attack": AttackConfig.populate(raw.pop("attack", None), _join(path, "attack")),
        }
        if "defenses" in raw:
            nested["defenses"] = [
                DefenseSpec.populate(d, _join(path, f"defenses[{i}]")) for i, d in enumerate(raw.pop("defenses"))
            ]
        if raw.get("sweep") is not None:
            nested["sweep"] = SweepConfig.populate(raw.pop("sweep"), _join(path, "sweep"))

        config = _populate(_class=cls, dictionary=raw, mapping={}, path=path)
        for key, value in nested.items():
            setattr(config, key, value)
        return config.validate(path)

    def validate(self, path: str = "") -> "ExperimentConfig":
        """Check the cross-field invariants and return ``self``."""
        self.seeds = tuple(self.seeds)
        _require(len(self.seeds) > 0, "is required (no implicit seeding)", path, "seeds")
        _require(all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds), "must be ints", path, "seeds")
        self.attacks = tuple(self.attacks)
        for i, kind in enumerate(self.attacks):
            _require(kind in ATTACK_KINDS, f"must be one of {ATTACK_KINDS}", path, f"attacks[{i}]")
        self.defenses = tuple(self.defenses)
        _require(len(self.defenses) > 0, "must list at least one defense", path, "defenses")
        labels = [d.label for d in self.defenses]
        _require(len(set(labels)) == len(labels), "contains duplicate defenses", path, "defenses")
        _require(self.histogram_bins >= 1, "must be positive", path, "histogram_bins")
        return self


# ---------------------------------------------------------------------------
# Figure styling
# ---------------------------------------------------------------------------


def _populate_style(_class, dictionary: dict[str, Any], mapping: dict[str, str]):
    """Like ``_populate`` but keeps unknown keys as extra matplotlib keyword arguments."""
    mapped = {mapping.get(k, k): v for k, v in dictionary.items()}
    known_fields = {f.name for f in fields(_class)} - {"_extra"}

    known = {k: v for k, v in mapped.items() if k in known_fields}
    extra = {k: v for k, v in mapped.items() if k not in known_fields}

    return _class(**known, _extra=extra)


@dataclass
class HistogramConfig:
    """Styling of the member/non-member histogram pair."""

    bins: int = 20
    member_color: str = "tab:red"
    nonmember_color: str = "tab:blue"
    alpha: float = 0.5
    histtype: str = "stepfilled"
    linewidth: float | None = None

    # For extra params - pass as dict to this field directly
    _extra: dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def populate(cls, dictionary: dict[str, Any]) -> "HistogramConfig":
        """Create a HistogramConfig instance from a dictionary, using a mapping for shorthand keys."""
        return _populate_style(_class=cls, dictionary=dictionary, mapping=HIST_ATTRS)

    def hist_kwargs(self) -> dict[str, Any]:
        """Keyword arguments shared by both ``Axes.hist`` calls."""
        result = {"alpha": self.alpha, "histtype": self.histtype}
        if self.linewidth is not None:
            result["linewidth"] = self.linewidth
        result.update(self._extra)
        return result

    def get_dict(self) -> dict[str, Any]:
        """Get all parameters as dict."""
        result = {k: v for k, v in self.__dict__.items() if not k.startswith("_") and v is not None}
        result.update(self._extra)
        return result

    def __repr__(self):
        """Pretty repr showing both explicit and extra params."""
        param_str = ", ".join(f"{k}={v!r}" for k, v in sorted(self.get_dict().items()))
        return f"{self.__class__.__name__}({param_str})"


@dataclass
class SeriesConfig:
    """Styling of the trade-off curves; sequences are cycled over defense families."""

    marker: str | Sequence[str] | None = "o"
    linestyle: str | Sequence[str] | None = "-"
    linewidth: float | Sequence[float] | None = None
    markersize: float | Sequence[float] | None = None
    color: str | Sequence[str] | None = None

    _extra: dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def populate(cls, dictionary: dict[str, Any]) -> "SeriesConfig":
        """Create a SeriesConfig instance from a dictionary, using a mapping for shorthand keys."""
        return _populate_style(_class=cls, dictionary=dictionary, mapping=SERIES_ATTRS)

    def get_dict(self) -> dict[str, Any]:
        """Get all parameters as dict for matplotlib."""
        result = {k: v for k, v in self.__dict__.items() if not k.startswith("_") and v is not None}
        result.update(self._extra)
        return result

    def for_series(self, index: int) -> dict[str, Any]:
        """Parameters for the ``index``-th series, picking from sequences cyclically."""
        return {
            key: (value[index % len(value)] if isinstance(value, (list, tuple)) else value)
            for key, value in self.get_dict().items()
        }

    def __repr__(self):
        """Pretty repr showing both explicit and extra params."""
        param_str = ", ".join(f"{k}={v!r}" for k, v in sorted(self.get_dict().items()))
        return f"{self.__class__.__name__}({param_str})"

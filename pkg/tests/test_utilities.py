"""Tests for the configuration classes and shared helpers in backend.utilities."""

import logging

import numpy as np
import pytest

from purilab.backend.error_handling import ConfigurationError, ModeError
from purilab.backend.utilities import (
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


class TestSyntheticSpec:
    """Test SyntheticSpec class."""

    def test_shorthand_keys(self):
        """Aliases expand to field names."""
        spec = SyntheticSpec.populate({"k": 5, "d": 8, "noise": 0.05})
        assert (spec.num_classes, spec.feature_dim, spec.flip_noise) == (5, 8, 0.05)

    def test_none_gives_defaults(self):
        """A missing section takes every default."""
        assert SyntheticSpec.populate(None).get_dict() == SyntheticSpec().get_dict()

    def test_one_class(self):
        """One class is not a classification problem."""
        with pytest.raises(ConfigurationError, match="dataset.num_classes"):
            SyntheticSpec.populate({"num_classes": 1})

    def test_repr(self):
        """The repr lists every parameter."""
        assert repr(SyntheticSpec()).startswith("SyntheticSpec(num_classes=20, feature_dim=100")


class TestAllocationSpec:
    """Test AllocationSpec class."""

    def test_equal_thirds(self):
        """Unset sizes split the data into thirds."""
        assert AllocationSpec().resolve(300) == (100, 100, 100)

    def test_explicit_sizes(self):
        """Set sizes win over thirds."""
        assert AllocationSpec.populate({"d1": 50}).resolve(300) == (50, 100, 100)

    def test_fraction_range(self):
        """Attacker fractions must be positive."""
        with pytest.raises(ConfigurationError, match="attacker_member_fraction"):
            AllocationSpec.populate({"attacker_member_fraction": 0.0})


class TestTargetConfig:
    """Test TargetConfig class."""

    def test_hidden_alias(self):
        """``hidden`` is stored as a tuple of widths."""
        assert TargetConfig.populate({"hidden": [64, 32]}).hidden_dims == (64, 32)

    def test_softmax_hidden(self):
        """Hidden layers cannot use softmax."""
        with pytest.raises(ConfigurationError, match="activation"):
            TargetConfig.populate({"activation": "softmax"})

    def test_unknown_optimizer(self):
        """Only SGD and Adam are available."""
        with pytest.raises(ConfigurationError, match="optimizer"):
            TargetConfig.populate({"optimizer": "rmsprop"})


class TestPurifierHyper:
    """Test PurifierHyper class."""

    @pytest.mark.parametrize(
        "values, field",
        [
            ({"alpha": 0.1, "mode": "base"}, "alpha"),
            ({"beta": 1.0, "mode": "base"}, "beta"),
            ({"beta": 1.0, "mode": "inv"}, "beta"),
            ({"alpha": 0.1, "mode": "mem"}, "alpha"),
        ],
    )
    def test_mode_constraints(self, values, field):
        """Each mode excludes the weights of the adversaries it does not train."""
        with pytest.raises(ModeError, match=f"purifier.{field}"):
            PurifierHyper.populate(values)

    def test_both_allows_everything(self):
        """Joint mode takes both weights."""
        hyper = PurifierHyper.populate({"lambda": 1, "alpha": 0.1, "beta": 5, "mode": "both"})
        assert hyper.uses_adversary and hyper.uses_discriminator

    def test_zero_weights_in_both(self):
        """Zero weights are allowed in any mode."""
        assert PurifierHyper(mode="both").validate().label == "purifier-both(1,0,0)"

    def test_unknown_reference(self):
        """The reference source must be known."""
        with pytest.raises(ConfigurationError, match="reference"):
            PurifierHyper.populate({"reference": "d3"})

    def test_learning_rate_aliases(self):
        """Upper- and lower-case model names are accepted."""
        hyper = PurifierHyper.populate({"lr_G": 0.1, "lr_h": 0.2, "lr_I": 0.3})
        assert (hyper.lr_generator, hyper.lr_adversary, hyper.lr_discriminator) == (0.1, 0.2, 0.3)


class TestAttackConfig:
    """Test AttackConfig class."""

    def test_top_k(self):
        """``top_k`` limits the Mlleaks input."""
        assert AttackConfig.populate({"top_k": 3}).mlleaks_top_k == 3

    def test_surrogate_choice(self):
        """The adaptive surrogate is ``base`` or ``defender``."""
        with pytest.raises(ConfigurationError, match="adaptive_surrogate"):
            AttackConfig.populate({"adaptive_surrogate": "oracle"})


class TestDefenseSpec:
    """Test DefenseSpec class."""

    def test_purifier_default_hyper(self):
        """A purifier defense without settings uses the defaults."""
        spec = DefenseSpec.populate({"kind": "purifier"})
        assert spec.purifier.get_dict() == PurifierHyper().get_dict()

    def test_nested_path(self):
        """Errors inside the purifier block carry the full path."""
        with pytest.raises(ModeError, match=r"defense\.purifier\.beta"):
            DefenseSpec.populate({"kind": "purifier", "purifier": {"beta": 2.0}})

    def test_purifier_only_on_purifier(self):
        """Other defenses take no purifier block."""
        with pytest.raises(ConfigurationError, match="defense.purifier"):
            DefenseSpec.populate({"kind": "one_hot", "purifier": {}})

    def test_noise_alias_and_label(self):
        """``noise`` sets the magnitude, which appears in the label."""
        assert DefenseSpec.populate({"kind": "random_noise", "noise": 0.5}).label == "random_noise(0.5)"

    def test_magnitude_range(self):
        """Magnitudes lie in ``[0, 1]``."""
        with pytest.raises(ConfigurationError, match="magnitude"):
            DefenseSpec.populate({"kind": "random_noise", "magnitude": 1.5})


class TestSweepConfig:
    """Test SweepConfig class."""

    def test_modes_inferred(self):
        """Each point gets the smallest mode its weights need."""
        sweep = SweepConfig.populate({"purifier_points": [[1, 0, 0], [1, 0.1, 0], [1, 0, 5], [1, 0.1, 5]]})
        modes = [h.mode for h in sweep.purifier_hypers(PurifierHyper(epochs=3))]
        assert modes == ["base", "inv", "mem", "both"]

    def test_template_schedule_kept(self):
        """Points share the template's schedule."""
        hypers = SweepConfig().purifier_hypers(PurifierHyper(epochs=3, batch_size=8))
        assert all((h.epochs, h.batch_size) == (3, 8) for h in hypers)

    def test_point_arity(self):
        """Points are weight triples."""
        with pytest.raises(ConfigurationError, match="points"):
            SweepConfig.populate({"purifier_points": [[1, 0]]})


class TestExperimentConfig:
    """Test ExperimentConfig class."""

    def test_seed_required(self):
        """There is no implicit seed."""
        with pytest.raises(ConfigurationError, match="seeds"):
            ExperimentConfig.populate({})

    def test_single_seed_key(self):
        """``seed`` is shorthand for a one-element ``seeds``."""
        assert ExperimentConfig.populate({"seed": 4}).seeds == (4,)

    def test_default_defenses(self):
        """By default every baseline and every purifier mode is compared."""
        labels = [d.label for d in ExperimentConfig.populate({"seeds": [0]}).defenses]
        assert labels[:3] == ["none", "one_hot", "random_noise(0.3)"]
        assert len(labels) == 7

    def test_duplicate_defenses(self):
        """The same defense twice would overwrite its outputs."""
        with pytest.raises(ConfigurationError, match="duplicate"):
            ExperimentConfig.populate({"seeds": [0], "defenses": [{"kind": "none"}, {"kind": "none"}]})

    def test_unknown_attack(self):
        """Attack names are checked."""
        with pytest.raises(ConfigurationError, match=r"attacks\[1\]"):
            ExperimentConfig.populate({"seeds": [0], "attacks": ["nsh", "shadow"]})

    def test_get_dict_nested(self):
        """Nested configs serialize to plain mappings and lists."""
        document = ExperimentConfig.populate({"seeds": [0, 1]}).get_dict()
        assert document["seeds"] == [0, 1]
        assert document["defenses"][0] == {"kind": "none", "magnitude": 0.0, "seed": 0, "purifier": None}
        assert document["target"]["hidden_dims"] == list(TargetConfig().hidden_dims)


class TestHelpers:
    """Test the seeding and mode helpers."""

    def test_stable_hash(self):
        """The hash does not depend on the interpreter session."""
        assert stable_hash("purifier") == stable_hash("purifier")
        assert stable_hash("G") != stable_hash("H")

    def test_derive_rng_streams(self):
        """Streams depend on both the seed and the component path."""
        a = derive_rng(1, "purifier", "G").random(3)
        np.testing.assert_array_equal(a, derive_rng(1, "purifier", "G").random(3))
        assert not np.allclose(a, derive_rng(1, "purifier", "H").random(3))
        assert not np.allclose(a, derive_rng(2, "purifier", "G").random(3))

    @pytest.mark.parametrize("alpha, beta, mode", [(0, 0, "base"), (0.1, 0, "inv"), (0, 5, "mem"), (0.1, 5, "both")])
    def test_infer_mode(self, alpha, beta, mode):
        """The smallest admitting mode is chosen."""
        assert infer_mode(alpha, beta) == mode

    def test_configure_logging_once(self):
        """Repeated calls change the level without stacking handlers."""
        configure_logging("INFO")
        configure_logging("DEBUG")
        logger = logging.getLogger("purilab")
        assert logger.level == logging.DEBUG
        assert sum(getattr(h, "_purilab", False) for h in logger.handlers) == 1


class TestHistogramConfig:
    """Test HistogramConfig class."""

    def test_hist_kwargs(self):
        """Shared keyword arguments exclude the per-side colours."""
        assert HistogramConfig().hist_kwargs() == {"alpha": 0.5, "histtype": "stepfilled"}

    def test_populate_with_extra(self):
        """Aliases expand and unknown keys are kept for matplotlib."""
        config = HistogramConfig.populate({"c_member": "k", "lw": 2, "hatch": "//"})
        assert config.member_color == "k"
        assert config.hist_kwargs() == {"alpha": 0.5, "histtype": "stepfilled", "linewidth": 2, "hatch": "//"}

    def test_get_dict_drops_none(self):
        """Unset optional fields are left out."""
        assert "linewidth" not in HistogramConfig().get_dict()


class TestSeriesConfig:
    """Test SeriesConfig class."""

    def test_for_series_cycles(self):
        """Sequences are picked cyclically, scalars repeated."""
        config = SeriesConfig.populate({"c": ["r", "g"], "ls": "--"})
        assert config.for_series(0) == {"marker": "o", "linestyle": "--", "color": "r"}
        assert config.for_series(3)["color"] == "g"

    def test_repr_sorted(self):
        """The repr lists set parameters alphabetically."""
        assert repr(SeriesConfig()) == "SeriesConfig(linestyle='-', marker='o')"

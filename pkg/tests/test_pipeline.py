"""Tests for configuration loading, stage bookkeeping and the end-to-end drivers."""

import hashlib
import json

import pytest
import yaml

from purilab.backend.error_handling import ConfigurationError, EmptyDataError, PipelineError
from purilab.backend.utilities import DefenseSpec, ExperimentConfig
from purilab.data import save_csv
from purilab.pipeline import (
    config_hash,
    evaluate_defense,
    experiment_dir,
    load_config,
    make_context,
    prepare_splits,
    run_pipeline,
    run_tradeoff_sweep,
    stage,
    validate_config,
)
from purilab.target import train_target


class TestLoadConfig:
    """Test reading experiment files."""

    def test_missing_file(self, tmp_path):
        """A missing file is a configuration error."""
        with pytest.raises(ConfigurationError, match="cannot read"):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        """Unparsable YAML is a configuration error."""
        path = tmp_path / "bad.yaml"
        path.write_text("seeds: [1\n")
        with pytest.raises(ConfigurationError, match="not valid YAML"):
            load_config(path)

    def test_not_a_mapping(self, tmp_path):
        """The top level must be a mapping."""
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigurationError, match="mapping"):
            load_config(path)


class TestValidateConfig:
    """Test normalization and validation of experiment files."""

    def test_defaults_filled(self, experiment_yaml):
        """Unspecified sections take their defaults."""
        config = validate_config(experiment_yaml, write_echo=False)
        assert config.seeds == (1,)
        assert config.allocation.attacker_member_fraction == 0.5
        assert [d.label for d in config.defenses] == ["none", "one_hot", "purifier-base(1,0,0)"]

    def test_seed_is_required(self, tmp_path, experiment_dict):
        """Runs never seed themselves implicitly."""
        del experiment_dict["seeds"]
        path = tmp_path / "e.yaml"
        path.write_text(yaml.safe_dump(experiment_dict))
        with pytest.raises(ConfigurationError) as err:
            validate_config(path, write_echo=False)
        assert err.value.field_path == "seeds"

    def test_override(self, experiment_yaml):
        """Command-line overrides replace file values."""
        assert validate_config(experiment_yaml, {"seeds": [5, 6]}, write_echo=False).seeds == (5, 6)

    def test_field_path_in_error(self, tmp_path, experiment_dict):
        """Errors name the dotted path of the offending field."""
        experiment_dict["defenses"][2]["purifier"]["alpha"] = 0.1
        path = tmp_path / "e.yaml"
        path.write_text(yaml.safe_dump(experiment_dict))
        with pytest.raises(ConfigurationError, match=r"defenses\[2\]\.purifier\.alpha"):
            validate_config(path, write_echo=False)

    def test_unknown_field(self, tmp_path, experiment_dict):
        """Typos are caught rather than ignored."""
        experiment_dict["target"]["epochz"] = 3
        path = tmp_path / "e.yaml"
        path.write_text(yaml.safe_dump(experiment_dict))
        with pytest.raises(ConfigurationError, match="target.epochz"):
            validate_config(path, write_echo=False)

    def test_dataset_path_resolved(self, tmp_path, experiment_dict, tiny_dataset):
        """A relative dataset path is resolved against the config file."""
        save_csv(tiny_dataset, tmp_path / "data.csv")
        experiment_dict["dataset_path"] = "data.csv"
        path = tmp_path / "e.yaml"
        path.write_text(yaml.safe_dump(experiment_dict))
        config = validate_config(path, write_echo=False)
        assert config.dataset_path == str(tmp_path / "data.csv")
        assert len(prepare_splits(config, 0).dataset) == len(tiny_dataset)

    def test_missing_dataset_path(self, tmp_path, experiment_dict):
        """A dataset path that does not exist is reported on that field."""
        experiment_dict["dataset_path"] = "missing.csv"
        path = tmp_path / "e.yaml"
        path.write_text(yaml.safe_dump(experiment_dict))
        with pytest.raises(ConfigurationError) as err:
            validate_config(path, write_echo=False)
        assert err.value.field_path == "dataset_path"

    def test_echo_written(self, experiment_yaml):
        """The normalized configuration is echoed into the experiment directory."""
        config = validate_config(experiment_yaml)
        echo = yaml.safe_load((experiment_dir(config) / "config.normalized.yaml").read_text())
        assert echo["seeds"] == [1]
        assert echo["target"]["hidden_dims"] == [16]


class TestConfigHash:
    """Test experiment directory naming."""

    def test_ignores_output_dir(self, experiment_dict):
        """Moving the output does not change the hash."""
        a = ExperimentConfig.populate(experiment_dict)
        b = ExperimentConfig.populate(experiment_dict | {"output_dir": "elsewhere"})
        assert config_hash(a) == config_hash(b)

    def test_changes_with_content(self, experiment_dict):
        """Different experiments get different directories."""
        a = ExperimentConfig.populate(experiment_dict)
        b = ExperimentConfig.populate(experiment_dict | {"seeds": [2]})
        assert config_hash(a) != config_hash(b)
        assert experiment_dir(a).name == f"tiny-{config_hash(a)}"


class TestStage:
    """Test stage tagging of failures."""

    def test_wraps_library_errors(self):
        """Failures carry the stage name."""
        with pytest.raises(PipelineError, match=r"\[train-target\]") as err:
            with stage("train-target"):
                raise EmptyDataError("no rows")
        assert isinstance(err.value.cause, EmptyDataError)

    def test_keeps_innermost_stage(self):
        """Nested stages keep the innermost tag."""
        with pytest.raises(PipelineError) as err:
            with stage("outer"):
                with stage("inner"):
                    raise ValueError("bad")
        assert err.value.stage == "inner"

    def test_passes_other_exceptions(self):
        """Programming errors are not disguised as stage failures."""
        with pytest.raises(KeyError):
            with stage("evaluate"):
                raise KeyError("x")


class TestEvaluateDefense:
    """Test a single defense evaluation without persistence."""

    def test_one_hot_report(self, tmp_path, experiment_dict):
        """One-hot keeps accuracy and gives a fully populated report."""
        config = ExperimentConfig.populate(experiment_dict | {"attacks": ["label", "inversion"]})
        splits = prepare_splits(config, 1)
        target = train_target(splits.train, config.target)
        context = make_context(splits, target, "digest", tmp_path)
        raw_report, _ = evaluate_defense(DefenseSpec("none"), context, config)
        report, timing = evaluate_defense(DefenseSpec("one_hot"), context, config)
        assert report.defense == "one_hot"
        assert report.test_accuracy == raw_report.test_accuracy
        assert report.dispersion_after == 0.0
        assert report.inference_accuracy["nsh"] is None
        assert report.inversion_error_overall is not None
        assert timing.train_seconds is None
        assert not (tmp_path / "one_hot").exists()


@pytest.mark.slow
class TestRunPipeline:
    """End-to-end runs of the tiny experiment."""

    def test_outputs(self, experiment_yaml):
        """Every seed and defense gets a report, and the run is checksummed."""
        config = validate_config(experiment_yaml)
        result = run_pipeline(config)
        assert len(result.reports) == 3
        seed_dir = result.directory / "seed-1"
        for name in ("data/manifest.yaml", "target/F.json", "none/report.json", "one_hot/timing.json"):
            assert (seed_dir / name).is_file()
        assert (seed_dir / "purifier-base_1_0_0" / "purifier" / "G.json").is_file()
        assert (seed_dir / "none" / "figures" / "hist_confidence.png").is_file()
        assert (result.directory / "comparison.csv").is_file()
        assert (result.directory / "summary.csv").is_file()

        checksums = yaml.safe_load((result.directory / "checksums.yaml").read_text())
        report_path = seed_dir / "none" / "report.json"
        assert checksums["seed-1/none/report.json"] == hashlib.sha256(report_path.read_bytes()).hexdigest()

    def test_report_contents(self, experiment_yaml):
        """Reports hold every attack, the derived estimate and the split fingerprint."""
        result = run_pipeline(validate_config(experiment_yaml))
        report = json.loads((result.directory / "seed-1" / "none" / "report.json").read_text())
        assert set(report["inference_accuracy"]) == {"mlleaks", "mlleaks-a", "nsh", "label"}
        assert report["label_estimate"] == pytest.approx(0.5 + report["generalization_gap"] / 2)
        assert len({r.split_digest for r in result.reports}) == 1

    def test_refuses_to_overwrite(self, experiment_yaml):
        """A finished run is immutable unless overwriting is asked for."""
        config = validate_config(experiment_yaml)
        run_pipeline(config)
        with pytest.raises(PipelineError, match="already holds a finished run"):
            run_pipeline(config)
        assert len(run_pipeline(config, overwrite=True).reports) == 3

    def test_reproducible(self, tmp_path, experiment_dict):
        """Two runs of the same configuration write byte-identical reports."""
        paths = []
        for out in ("a", "b"):
            path = tmp_path / f"{out}.yaml"
            path.write_text(yaml.safe_dump(experiment_dict | {"output_dir": str(tmp_path / out)}))
            result = run_pipeline(validate_config(path))
            paths.append(result.directory / "seed-1" / "purifier-base_1_0_0" / "report.json")
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_reference_exposure(self, tmp_path, experiment_dict):
        """With exposure enabled each report measures attacks on the reference set."""
        experiment_dict |= {"reference_exposure": True, "attacks": ["label", "inversion"]}
        experiment_dict["defenses"] = [{"kind": "none"}]
        path = tmp_path / "e.yaml"
        path.write_text(yaml.safe_dump(experiment_dict))
        report = run_pipeline(validate_config(path)).reports[0]
        assert set(report.reference_exposure) == {"label", "inversion"}

    def test_sweep(self, tmp_path, experiment_dict):
        """The sweep evaluates every point and draws the panels."""
        experiment_dict["sweep"] = {
            "purifier_points": [[1.0, 0.0, 0.0]],
            "noise_magnitudes": [0.5],
            "include_one_hot": False,
        }
        path = tmp_path / "e.yaml"
        path.write_text(yaml.safe_dump(experiment_dict))
        csv_path, rows = run_tradeoff_sweep(validate_config(path))
        assert [row["family"] for row in rows] == ["none", "purifier", "random_noise"]
        assert csv_path.is_file()
        assert (csv_path.parent / "tradeoff.png").is_file()
        assert all(0.0 <= row["nsh_accuracy"] <= 1.0 for row in rows)

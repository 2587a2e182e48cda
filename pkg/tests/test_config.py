"""Tests for the run configuration and CLI flag mapping."""

import argparse

import pytest

from tcaq.config import (
    FLAG_TO_KEY,
    SECTIONS,
    RunConfig,
    dump_config,
    load_config,
    parse_config,
)
from tcaq.errors import ConfigError
from tcaq.main import apply_overrides, build_parser


def run_flags():
    """Option strings of the shared run flags, taken from the train subcommand."""
    parser = build_parser()
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {opt for action in subparsers.choices["train"]._actions for opt in action.option_strings}


class TestDefaults:
    """Built-in defaults."""

    def test_default_file_matches_dataclasses(self):
        assert load_config().to_dict() == RunConfig().to_dict()

    def test_defaults_are_valid(self):
        RunConfig().validate()

    def test_sections(self):
        assert list(RunConfig().to_dict()) == list(SECTIONS)

    def test_derived_paths(self):
        config = RunConfig.from_dict({"run": {"out": "runs/x"}})
        assert str(config.model_path) == "runs/x/model.tcaq"
        config.set_value("run", "model", "elsewhere.tcaq")
        assert str(config.model_path) == "elsewhere.tcaq"

    def test_full_scale_recon(self):
        config = RunConfig.from_dict({"recon": {"full_scale": True}, "run": {"seed": 7}})
        cfg = config.recon_config()
        assert (cfg.init_iters, cfg.par_iters, cfg.seed) == (20000, 10000, 7)


class TestLoading:
    """YAML files and text."""

    def test_partial_file_merges_over_defaults(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("quant:\n  bits_a: 4\ntcr:\n  clamp: 5.0\n")
        config = load_config(path)
        assert config.quant.bits_a == 4
        assert config.quant.bits_w == 4
        assert config.tcr.clamp == 5.0

    def test_dump_parse_round_trip(self, tmp_path):
        config = RunConfig.from_dict({"ablation": {"par_sweep": [[500, 1]]}, "tcr": {"clamp": 10.0}})
        text = dump_config(config, tmp_path / "out" / "config.yaml")
        assert (tmp_path / "out" / "config.yaml").read_text() == text
        assert parse_config(text).to_dict() == config.to_dict()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("quant: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="section"):
            RunConfig.from_dict({"quantization": {}})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bits"):
            RunConfig.from_dict({"quant": {"bits": 4}})

    def test_empty_section_keeps_defaults(self):
        assert RunConfig.from_dict({"tcr": None}).tcr.groups == 20


class TestValidation:
    """Constraint checks."""

    @pytest.mark.parametrize("data", [
        {"quant": {"bits_w": 9}},
        {"quant": {"bits_a": 1}},
        {"quant": {"bits_s": 5}},
        {"tcr": {"groups": 0}},
        {"tcr": {"groups": 21}},
        {"tcr": {"clamp": 0.5}},
        {"ablation": {"clamp_sweep": [3.0, 0.9]}},
        {"ablation": {"bit_settings": [[4, 8]]}},
        {"ablation": {"softmax_sweep": [3]}},
        {"ablation": {"par_sweep": [[5000, 1]]}},
        {"recon": {"par_iters": 3000}},
        {"calibration": {"n_chains": 0}},
        {"evaluate": {"reference": "imagenet"}},
        {"logging": {"level": "LOUD"}},
        {"sampling": {"inference_steps": 0}},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(data).validate()

    def test_full_precision_bits_allowed(self):
        RunConfig.from_dict({"quant": {"bits_w": 32, "bits_a": 32, "bits_s": 32}}).validate()

    def test_groups_follow_step_count(self):
        RunConfig.from_dict({"sampling": {"inference_steps": 4}, "tcr": {"groups": 4}}).validate()
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"sampling": {"inference_steps": 4}, "tcr": {"groups": 5}}).validate()


class TestFlags:
    """CLI flags and their config keys."""

    def test_every_value_flag_has_a_key(self):
        assert run_flags() - {"--config", "--verbose", "-v", "-h", "--help"} == set(FLAG_TO_KEY)

    def test_keys_exist(self):
        defaults = RunConfig().to_dict()
        for section, key in FLAG_TO_KEY.values():
            assert key in defaults[section]

    def test_overrides(self):
        args = build_parser().parse_args(["quantize", "--no-tcr", "--bits-a", "4", "--clamp", "5", "--par-rounds", "0"])
        config = apply_overrides(RunConfig(), args)
        assert config.tcr.enabled is False
        assert config.daq.enabled is True
        assert config.quant.bits_a == 4
        assert config.tcr.clamp == 5.0
        assert config.recon.rounds == 0

    def test_absent_flags_leave_config_alone(self):
        args = build_parser().parse_args(["train"])
        assert apply_overrides(RunConfig(), args).to_dict() == RunConfig().to_dict()

"""Tests for initialization, ablation arms and arm evaluation."""

import math

import numpy as np
import pytest

from tcaq.config import RunConfig
from tcaq.daq import PostSoftmaxMode
from tcaq.pipeline import (
    TOGGLE_ORDER,
    ablation_arms,
    arm_name,
    build_context,
    clamp_sweep_arms,
    evaluate_arm,
    initialize,
    layer_errors,
    par_sweep_arms,
    quantize_model,
    settings_from_config,
    softmax_sweep_arms,
    toggle_arms,
)
from tcaq.quant import QuantizerKind
from tcaq.quantized import QuantizedModel, QuantSettings
from tcaq.recon import ReconConfig, SamplerSpec


@pytest.fixture
def small_config():
    """A run config sized for the tiny UNet."""
    return RunConfig.from_dict({
        "calibration": {"n_chains": 4},
        "sampling": {"inference_steps": 4},
        "tcr": {"groups": 2},
        "quant": {"search_grid": 10},
        "evaluate": {"n_samples": 70, "seed": 5},
        "recon": {"init_iters": 2, "par_iters": 1, "rounds": 1, "batch": 2},
    }).validate()


# =============================================================================
# Arms
# =============================================================================

class TestArms:
    """Ablation grid and sweeps."""

    @pytest.mark.parametrize("toggles, name", [
        ((False, False, False), "baseline"),
        ((True, False, False), "+TCR"),
        ((False, True, True), "+DAQ+PAR"),
        ((True, True, True), "+TCR+DAQ+PAR"),
    ])
    def test_arm_name(self, toggles, name):
        assert arm_name(*toggles) == name

    def test_toggle_grid(self):
        arms = toggle_arms(RunConfig(), [4, 8, 8])
        assert len(arms) == len(TOGGLE_ORDER) == 8
        assert len({a.name for a in arms}) == 8
        assert arms[0].name == "W4A8S8 baseline"
        assert arms[-1].name == "W4A8S8 +TCR+DAQ+PAR"
        for arm, (tcr, daq, par_on) in zip(arms, TOGGLE_ORDER):
            assert arm.settings.tcr == tcr
            assert arm.daq == daq
            assert arm.settings.groups == (20 if tcr else 1)
            assert arm.settings.par_rounds == (2 if par_on else 0)

    def test_baseline_still_reconstructs(self):
        baseline = toggle_arms(RunConfig(), [4, 8, 8])[0]
        assert baseline.recon.init_iters == 2000
        assert baseline.settings.softmax_mode == PostSoftmaxMode.UNIFORM

    def test_clamp_sweep(self):
        arms = clamp_sweep_arms(RunConfig(), [3.0, 50.0])
        assert [a.name for a in arms] == ["clamp=3", "clamp=50"]
        for arm in arms:
            s = arm.settings
            assert (s.weight_bits, s.act_bits, s.tcr, s.par_rounds) == (4, 8, True, 0)
            assert s.softmax_mode == PostSoftmaxMode.ADAPTIVE

    def test_softmax_sweep(self):
        arms = softmax_sweep_arms(RunConfig(), [4, 8])
        assert len(arms) == 6
        assert {a.settings.softmax_mode for a in arms} == set(PostSoftmaxMode)
        assert [a.settings.softmax_bits for a in arms] == [4, 4, 4, 8, 8, 8]

    def test_par_sweep(self):
        arms = par_sweep_arms(RunConfig(), [[500, 1], [1000, 3]])
        assert [(a.recon.par_iters, a.recon.rounds, a.settings.par_rounds) for a in arms] == [(500, 1, 1), (1000, 3, 3)]

    def test_default_ablation_size(self):
        # two toggle grids, five clamps, three bit widths x three modes
        assert len(ablation_arms(RunConfig())) == 2 * 8 + 5 + 9

    def test_default_clamp_at_low_weight_bits(self):
        assert settings_from_config(RunConfig()).clamp == 5.0
        assert all(a.settings.clamp == 5.0 for a in toggle_arms(RunConfig(), [4, 8, 8]))

    def test_no_default_clamp_above_four_bits(self):
        config = RunConfig.from_dict({"quant": {"bits_w": 8}})
        assert settings_from_config(config).clamp is None
        assert all(a.settings.clamp is None for a in toggle_arms(RunConfig(), [8, 8, 8]))

    def test_explicit_clamp_wins(self):
        config = RunConfig.from_dict({"tcr": {"clamp": 50.0}})
        assert settings_from_config(config).clamp == 50.0
        assert toggle_arms(config, [8, 8, 8])[0].settings.clamp == 50.0

    def test_auto_clamp_off(self):
        config = RunConfig.from_dict({"tcr": {"auto_clamp": False}})
        assert settings_from_config(config).clamp is None

    def test_settings_from_config(self):
        config = RunConfig.from_dict({"tcr": {"enabled": False}, "daq": {"enabled": False}, "quant": {"bits_a": 6}})
        settings = settings_from_config(config)
        assert settings.groups == 1
        assert settings.softmax_mode == PostSoftmaxMode.UNIFORM
        assert settings.label == "W4A6"


# =============================================================================
# Initialization
# =============================================================================

class TestInitialize:
    """The quantization plan."""

    def test_full_method_plan(self, tiny_model, tiny_cal):
        qmodel, stats = initialize(tiny_model, tiny_cal, QuantSettings(groups=2), search_grid=10,
                                   calibration_seconds=1.0)
        weight_ids = {s.layer_id for s in tiny_model.weight_layers()}
        assert set(qmodel.scaling) == weight_ids
        assert set(qmodel.act_tables) == weight_ids
        assert all(qmodel.act_tables[lid].group_count == 2 for lid in weight_ids)
        assert len(qmodel.softmax_decisions) == len(tiny_model.post_softmax_layers()) * len(tiny_cal.timesteps)
        assert set(stats.spread_after) == weight_ids
        assert stats.daq_overhead == pytest.approx(stats.daq_seconds)

    def test_tcr_off(self, tiny_model, tiny_cal):
        qmodel, stats = initialize(tiny_model, tiny_cal, QuantSettings(tcr=False, groups=1), search_grid=10)
        assert not qmodel.scaling and not qmodel.reparam
        assert not stats.spread_after
        assert stats.daq_overhead is None

    def test_uniform_softmax_uses_tables(self, tiny_model, tiny_cal):
        settings = QuantSettings(groups=2, softmax_mode=PostSoftmaxMode.UNIFORM)
        qmodel, stats = initialize(tiny_model, tiny_cal, settings, search_grid=10)
        assert not qmodel.softmax_decisions
        assert stats.daq_seconds == 0.0
        for spec in tiny_model.post_softmax_layers():
            assert qmodel.activation_params(spec.layer_id, 0).kind == QuantizerKind.UNIFORM

    def test_forced_log2_softmax(self, tiny_model, tiny_cal):
        settings = QuantSettings(groups=2, softmax_mode=PostSoftmaxMode.LOG2)
        qmodel, _ = initialize(tiny_model, tiny_cal, settings, search_grid=10)
        assert all(d.chosen == QuantizerKind.LOG2 for d in qmodel.softmax_decisions.values())

    def test_full_precision_activations_skip_tables(self, tiny_model, tiny_cal):
        settings = QuantSettings(act_bits=32, softmax_bits=32, groups=2)
        qmodel, _ = initialize(tiny_model, tiny_cal, settings, search_grid=10)
        assert not qmodel.act_tables and not qmodel.softmax_decisions


# =============================================================================
# Evaluation
# =============================================================================

class TestEvaluation:
    """Layer errors, end-to-end quantization and arm scoring."""

    def test_layer_errors_cover_quantizable_layers(self, tiny_model, tiny_qmodel, tiny_cal):
        errors = layer_errors(tiny_model, tiny_qmodel, tiny_cal)
        assert set(errors) == {s.layer_id for s in tiny_model.quantizable_layers()}
        assert all(e["mse"] >= 0 for e in errors.values())

    def test_full_precision_model_has_no_error(self, tiny_model, tiny_cal):
        qmodel = QuantizedModel(tiny_model, QuantSettings(weight_bits=32, act_bits=32, softmax_bits=32, tcr=False))
        errors = layer_errors(tiny_model, qmodel, tiny_cal, layer_ids=["mid.conv1", "mid.attn"])
        assert all(e["sqnr_db"] == math.inf for e in errors.values())

    def test_quantize_model_runs_par_rounds(self, tiny_model, tiny_cal, sched):
        settings = QuantSettings(groups=2, par_rounds=1)
        recon = ReconConfig(init_iters=2, par_iters=1, rounds=0, batch=2)
        sampler = SamplerSpec(n_chains=2, inference_steps=4, sched=sched)
        _, log, _ = quantize_model(tiny_model, tiny_cal, settings, recon, sampler)
        assert log.sources == ["fp", "q0"]

    def test_context_reference(self, tiny_model, small_config, sched):
        ctx = build_context(small_config, tiny_model, sched)
        assert ctx.reference.shape == (70, 1, 8, 8)
        assert ctx.cal.timesteps == [75, 50, 25, 0]
        assert ctx.sampler.n_chains == 4

    def test_evaluate_arm(self, tiny_model, small_config, sched):
        ctx = build_context(small_config, tiny_model, sched)
        arm = toggle_arms(small_config, [4, 8, 8])[-1]
        result, qmodel, errors, _ = evaluate_arm(ctx, arm)
        assert result.arm == "W4A8S8 +TCR+DAQ+PAR"
        assert result.sample_count == 70 and result.seed == 5
        assert np.isfinite(result.fmd) and result.fmd >= 0
        assert result.seconds is None
        assert set(errors) == {s.layer_id for s in tiny_model.quantizable_layers()}
        assert qmodel.settings == arm.settings

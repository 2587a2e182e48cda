"""Tests for the quantized model wrapper."""

import numpy as np
import pytest

from tcaq.daq import PostSoftmaxMode
from tcaq.quant import QuantizerKind
from tcaq.quantized import (
    QuantModelError,
    QuantSettings,
    QuantizedModel,
    inverse_rectified_sigmoid,
    load_quantized,
    rectified_sigmoid,
    save_quantized,
)
from tcaq.tcr import ScalingVector
from tcaq.tensor import Tensor


class TestQuantSettings:
    """Settings label and archive encoding."""

    def test_label(self):
        assert QuantSettings(weight_bits=6, act_bits=6).label == "W6A6"

    @pytest.mark.parametrize("settings", [
        QuantSettings(),
        QuantSettings(weight_bits=8, tcr=False, softmax_mode=PostSoftmaxMode.LOG2, clamp=4.0, par_rounds=3),
        QuantSettings(softmax_mode=PostSoftmaxMode.UNIFORM, groups=1),
    ])
    def test_array_encoding(self, settings):
        assert QuantSettings.from_array(settings.to_array()) == settings


class TestRectifiedSigmoid:
    """Soft rounding variable h(v)."""

    def test_inverse_inside_unit_interval(self):
        h = np.array([0.01, 0.3, 0.5, 0.99])
        v = inverse_rectified_sigmoid(h)
        np.testing.assert_allclose(rectified_sigmoid(Tensor(v)).data, h, rtol=1e-5)

    def test_saturates(self):
        out = rectified_sigmoid(Tensor(np.array([-50.0, 50.0]))).data
        np.testing.assert_array_equal(out, [0.0, 1.0])


class TestWeightQuantizer:
    """Per-output-channel weight codes."""

    def test_nearest_codes_reconstruct_weights(self, tiny_qmodel):
        quantizer = tiny_qmodel.weight_quantizer("mid.conv1")
        step = np.broadcast_to(quantizer.params.broadcast(quantizer.base.ndim)[0], quantizer.base.shape)
        err = np.abs(quantizer.dequantized() - quantizer.base)
        assert np.all(err <= 0.5 * step + 1e-6)

    def test_set_codes_checks_shape_and_range(self, tiny_qmodel):
        quantizer = tiny_qmodel.weight_quantizer("mid.conv1")
        with pytest.raises(QuantModelError):
            quantizer.set_codes(np.zeros((1, 1)))
        with pytest.raises(QuantModelError):
            quantizer.set_codes(np.full(quantizer.base.shape, quantizer.params.qmax + 1))

    def test_set_codes_changes_tensor(self, tiny_qmodel):
        quantizer = tiny_qmodel.weight_quantizer("mid.conv1")
        before = quantizer.tensor().data.copy()
        quantizer.set_codes(np.zeros(quantizer.base.shape, dtype=np.int64))
        assert not np.array_equal(quantizer.tensor().data, before)
        quantizer.set_codes(None)
        np.testing.assert_array_equal(quantizer.tensor().data, before)

    def test_unknown_layer(self, tiny_qmodel):
        with pytest.raises(QuantModelError):
            tiny_qmodel.weight_quantizer("conv_in")


class TestQuantizedModel:
    """Plan lookups, runtime and checkpoints."""

    def test_boundary_layers_stay_full_precision(self, tiny_qmodel, tiny_model):
        for spec in tiny_model.boundary_layers():
            assert spec.layer_id not in tiny_qmodel.weights
            assert tiny_qmodel.activation_params(spec.layer_id, 0) is None

    def test_every_layer_has_a_plan(self, tiny_qmodel, tiny_model, tiny_cal):
        for spec in tiny_model.weight_layers():
            assert spec.layer_id in tiny_qmodel.scaling
            for t in tiny_cal.timesteps:
                assert tiny_qmodel.activation_params(spec.layer_id, t).kind == QuantizerKind.UNIFORM
        for spec in tiny_model.post_softmax_layers():
            for t in tiny_cal.timesteps:
                decision = tiny_qmodel.softmax_decisions[(spec.layer_id, t)]
                assert tiny_qmodel.activation_params(spec.layer_id, t) is decision.params

    def test_full_precision_settings(self, tiny_model):
        qmodel = QuantizedModel(tiny_model, QuantSettings(weight_bits=32, act_bits=32, softmax_bits=32, tcr=False))
        x = Tensor(np.random.default_rng(0).normal(size=(2, 1, 8, 8)))
        np.testing.assert_allclose(qmodel(x, 10).data, tiny_model(x, 10).data, rtol=1e-5, atol=1e-6)

    def test_reparam_alone_preserves_output(self, tiny_model, rng):
        qmodel = QuantizedModel(tiny_model, QuantSettings(weight_bits=32, act_bits=32, softmax_bits=32))
        spec = tiny_model.layer("mid.conv1")
        r_s = rng.uniform(0.5, 2.0, size=spec.in_channels)
        qmodel.set_scaling(ScalingVector(spec.layer_id, r_s=r_s, r_t=r_s[None], s_tar=np.ones(1)))
        x = Tensor(rng.normal(size=(2, 1, 8, 8)))
        np.testing.assert_allclose(qmodel(x, 10).data, tiny_model(x, 10).data, rtol=1e-4, atol=1e-5)

    def test_scaling_rejected_on_boundary_layer(self, tiny_qmodel):
        sv = ScalingVector("conv_in", r_s=np.ones(1), r_t=np.ones((1, 1)), s_tar=np.ones(1))
        with pytest.raises(QuantModelError):
            tiny_qmodel.set_scaling(sv)

    def test_quantized_output_differs_but_stays_close(self, tiny_qmodel, tiny_model, rng):
        x = Tensor(rng.normal(size=(2, 1, 8, 8)))
        fp = tiny_model(x, 50).data
        q = tiny_qmodel(x, 50).data
        assert not np.array_equal(fp, q)
        assert np.all(np.isfinite(q))

    def test_checkpoint_round_trip(self, tiny_qmodel, tmp_path, rng):
        loaded = load_quantized(save_quantized(tiny_qmodel, tmp_path / "q.tcaq"))
        assert loaded.settings == tiny_qmodel.settings
        assert set(loaded.weights) == set(tiny_qmodel.weights)
        for lid, quantizer in tiny_qmodel.weights.items():
            np.testing.assert_array_equal(loaded.weights[lid].codes(), quantizer.codes())
            assert loaded.weights[lid].params == quantizer.params
        assert set(loaded.act_tables) == set(tiny_qmodel.act_tables)
        assert set(loaded.softmax_decisions) == set(tiny_qmodel.softmax_decisions)
        loaded.quantize_activations = tiny_qmodel.quantize_activations = False
        x = Tensor(rng.normal(size=(2, 1, 8, 8)))
        np.testing.assert_allclose(loaded(x, 25).data, tiny_qmodel(x, 25).data, rtol=1e-4, atol=1e-5)

    def test_plain_checkpoint_is_rejected(self, tiny_model):
        with pytest.raises(QuantModelError):
            QuantizedModel.from_records(tiny_model.to_records())

    def test_scaling_vector_reloads_at_full_precision(self, tiny_model, tmp_path, rng):
        qmodel = QuantizedModel(tiny_model, QuantSettings(groups=2))
        spec = tiny_model.layer("mid.conv1")
        r_s = 1.0 + rng.uniform(size=spec.in_channels) / 3.0
        qmodel.set_scaling(ScalingVector(spec.layer_id, r_s=r_s, r_t=r_s[None], s_tar=np.ones(1), clamp_range=5.0))
        loaded = load_quantized(save_quantized(qmodel, tmp_path / "q.tcaq"))
        sv = loaded.scaling[spec.layer_id]
        assert sv.r_s.dtype == np.float64
        np.testing.assert_array_equal(sv.r_s, r_s)
        assert sv.clamp_range == 5.0
        np.testing.assert_array_equal(loaded.reparam[spec.layer_id].weight, qmodel.reparam[spec.layer_id].weight)

"""
Tests for the tensor core: op gradients, tape, optimizer and archive format.

GRADIENT TESTING:
Every op's tape gradient is compared with central finite differences in
float64. Non-scalar outputs are reduced with a fixed random weighting so
every output element contributes.
"""

import struct

import numpy as np
import pytest

from tcaq.tensor import (
    Adam,
    ArchiveError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    finite_difference_check,
    get_default_dtype,
    load_archive,
    no_grad,
    ops,
    precision,
    save_archive,
)

TOL = 1e-4


def weighted(fn, out_shape, seed=7):
    """Scalar function sum(fn(x) * w) for a fixed random w."""
    w = np.random.default_rng(seed).uniform(0.5, 1.5, size=out_shape)

    def f(x):
        return ops.reduce_sum(ops.mul(fn(x), Tensor(w)))

    return f


def check(fn, x, out_shape=None):
    x = np.asarray(x, dtype=np.float64)
    f = weighted(fn, x.shape if out_shape is None else out_shape)
    return finite_difference_check(f, x)


# =============================================================================
# Elementwise ops
# =============================================================================

class TestElementwiseGradients:
    """Gradients of the elementwise ops."""

    def test_add_sub_mul(self, rng):
        x = rng.normal(size=(3, 4))
        other = rng.normal(size=(3, 4))
        assert check(lambda t: ops.add(t, Tensor(other)), x) < TOL
        assert check(lambda t: ops.sub(Tensor(other), t), x) < TOL
        assert check(lambda t: ops.mul(t, Tensor(other)), x) < TOL

    def test_scale_and_affine(self, rng):
        x = rng.normal(size=(5,))
        assert check(lambda t: ops.scale(t, -2.5), x) < TOL
        assert check(lambda t: ops.affine(t, 1.2, -0.1), x) < TOL

    def test_sigmoid_and_silu(self, rng):
        x = rng.normal(size=(2, 6))
        assert check(ops.sigmoid, x) < TOL
        assert check(ops.silu, x) < TOL

    def test_clamp_away_from_bounds(self):
        x = np.array([[-1.5, -0.5, 0.3], [0.7, 1.4, -0.2]])
        assert check(lambda t: ops.clamp(t, -1.0, 1.0), x) < TOL

    def test_abs_away_from_zero(self):
        x = np.array([-1.5, -0.5, 0.3, 0.7])
        assert check(ops.absolute, x) < TOL

    def test_power(self, rng):
        x = rng.uniform(0.5, 2.0, size=(4,))
        assert check(lambda t: ops.power(t, 2.0), x) < TOL
        assert check(lambda t: ops.power(t, 0.5), x) < TOL

    def test_non_integer_power_rejects_negative_input(self):
        with pytest.raises(ShapeError):
            ops.power(Tensor([-1.0, 2.0]), 0.5)


# =============================================================================
# Reductions, losses, softmax
# =============================================================================

class TestReductionGradients:
    """Reductions and the softmax."""

    def test_mean_and_sum(self, rng):
        x = rng.normal(size=(3, 4))
        assert finite_difference_check(lambda t: ops.mean(t), x) < TOL
        assert check(lambda t: ops.reduce_sum(t, axis=1), x, out_shape=(3,)) < TOL
        assert check(lambda t: ops.mean(t, axis=0, keepdims=True), x, out_shape=(1, 4)) < TOL

    def test_mse_loss(self, rng):
        x = rng.normal(size=(2, 3))
        target = rng.normal(size=(2, 3))
        assert finite_difference_check(lambda t: ops.mse_loss(t, Tensor(target)), x) < TOL

    def test_softmax(self, rng):
        x = rng.normal(size=(2, 5))
        assert check(ops.softmax, x) < TOL

    def test_softmax_rows_sum_to_one(self, rng):
        y = ops.softmax(Tensor(rng.normal(size=(3, 7)) * 10)).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=1e-6)


# =============================================================================
# Linear algebra and convolution
# =============================================================================

class TestLayerGradients:
    """Matmul, linear, conv and normalization gradients."""

    def test_matmul(self, rng):
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(2, 4, 5))
        assert check(lambda t: ops.matmul(t, Tensor(b)), a, out_shape=(2, 3, 5)) < TOL
        assert check(lambda t: ops.matmul(Tensor(a), t), b, out_shape=(2, 3, 5)) < TOL

    def test_linear(self, rng):
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(2, 4))
        bias = rng.normal(size=(2,))
        assert check(lambda t: ops.linear(t, Tensor(w), Tensor(bias)), x, out_shape=(3, 2)) < TOL
        assert check(lambda t: ops.linear(Tensor(x), t, Tensor(bias)), w, out_shape=(3, 2)) < TOL
        assert check(lambda t: ops.linear(Tensor(x), Tensor(w), t), bias, out_shape=(3, 2)) < TOL

    def test_conv2d(self, rng):
        x = rng.normal(size=(2, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        assert check(lambda t: ops.conv2d(t, Tensor(w)), x, out_shape=(2, 3, 4, 4)) < TOL
        assert check(lambda t: ops.conv2d(Tensor(x), t), w, out_shape=(2, 3, 4, 4)) < TOL

    def test_conv2d_keeps_spatial_size(self, rng):
        y = ops.conv2d(Tensor(rng.normal(size=(1, 2, 8, 8))), Tensor(rng.normal(size=(5, 2, 1, 1))))
        assert y.shape == (1, 5, 8, 8)

    def test_conv2d_rejects_even_kernel(self, rng):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(1, 2, 2, 2))))

    def test_group_norm(self, rng):
        x = rng.normal(size=(2, 4, 3, 3))
        gamma = rng.uniform(0.5, 1.5, size=(4,))
        beta = rng.normal(size=(4,))
        assert check(lambda t: ops.group_norm(t, 2, Tensor(gamma), Tensor(beta)), x) < 1e-3
        assert check(lambda t: ops.group_norm(Tensor(x), 2, t, Tensor(beta)), gamma, out_shape=x.shape) < TOL

    def test_scale_embed_add(self, rng):
        x = rng.normal(size=(2, 3, 2, 2))
        e = rng.normal(size=(2, 3))
        assert check(lambda t: ops.scale_embed_add(Tensor(x), t), e, out_shape=x.shape) < TOL

    def test_channel_mul(self, rng):
        x = rng.normal(size=(2, 3, 2, 2))
        r = rng.uniform(0.5, 2.0, size=(3,))
        assert check(lambda t: ops.channel_mul(t, Tensor(r), axis=1), x) < TOL
        assert check(lambda t: ops.channel_mul(Tensor(x), t, axis=1), r, out_shape=x.shape) < TOL

    def test_channel_mul_last_axis(self, rng):
        x = rng.normal(size=(2, 5, 3))
        r = rng.uniform(0.5, 2.0, size=(3,))
        assert check(lambda t: ops.channel_mul(t, Tensor(r), axis=-1), x) < TOL


class TestShapeOps:
    """Reshaping, pooling and concatenation."""

    def test_reshape_and_transpose(self, rng):
        x = rng.normal(size=(2, 3, 4))
        assert check(lambda t: ops.reshape(t, (6, 4)), x, out_shape=(6, 4)) < TOL
        assert check(lambda t: ops.transpose(t, (2, 0, 1)), x, out_shape=(4, 2, 3)) < TOL

    def test_pool_and_upsample(self, rng):
        x = rng.normal(size=(1, 2, 4, 4))
        assert check(ops.avg_pool2, x, out_shape=(1, 2, 2, 2)) < TOL
        assert check(ops.upsample2, x, out_shape=(1, 2, 8, 8)) < TOL

    def test_concat(self, rng):
        x = rng.normal(size=(1, 2, 2, 2))
        other = rng.normal(size=(1, 3, 2, 2))
        assert check(lambda t: ops.concat([t, Tensor(other)], axis=1), x, out_shape=(1, 5, 2, 2)) < TOL


# =============================================================================
# Tape and strict shapes
# =============================================================================

class TestTape:
    """Recording, strict shapes and finiteness checks."""

    def test_mismatched_shapes_raise(self):
        with pytest.raises(ShapeError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3,))))

    def test_non_finite_input_raises(self):
        with pytest.raises(NonFiniteError):
            ops.sigmoid(Tensor([1.0, np.nan]))

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = ops.scale(x, 2.0)
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            with no_grad():
                ops.scale(x, 2.0)
        assert len(tape) == 0

    def test_untracked_inputs_are_not_recorded(self):
        with Tape() as tape:
            ops.scale(Tensor(np.ones(3)), 2.0)
        assert len(tape) == 0

    def test_gradient_accumulates_over_reuse(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape() as tape:
            loss = ops.reduce_sum(ops.add(x, x))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [2.0, 2.0])

    def test_replay_is_deterministic(self, rng):
        x = Tensor(rng.normal(size=(2, 2, 4, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)))
        with Tape() as tape:
            ops.silu(ops.conv2d(x, w))
        assert tape.replay()

    def test_precision_switches_default_dtype(self):
        assert get_default_dtype() == np.float32
        with precision("float64"):
            assert Tensor([1.0]).data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32


# =============================================================================
# Optimizer
# =============================================================================

class TestAdam:
    """Adam on a quadratic."""

    def test_minimizes_quadratic(self):
        target = np.array([1.0, -2.0, 0.5], dtype=np.float32)
        x = Tensor(np.zeros(3), requires_grad=True)
        opt = Adam([x], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            with Tape() as tape:
                loss = ops.mse_loss(x, Tensor(target))
            backward(tape, loss)
            opt.step()
        np.testing.assert_allclose(x.data, target, atol=1e-2)

    def test_skips_parameters_without_gradient(self):
        x = Tensor(np.ones(2), requires_grad=True)
        opt = Adam([x], lr=0.1)
        opt.step()
        np.testing.assert_array_equal(x.data, np.ones(2))


# =============================================================================
# Archive
# =============================================================================

class TestArchive:
    """The flat tensor archive."""

    def test_round_trip_keeps_order_and_values(self, tmp_path, rng):
        records = {
            "b/matrix": rng.normal(size=(3, 4)).astype(np.float32),
            "a/scalar": np.float32(2.5),
            "c/empty": np.zeros((0, 2), dtype=np.float32),
        }
        path = save_archive(tmp_path / "x.tcaq", records)
        loaded = load_archive(path)
        assert list(loaded) == list(records)
        for name, value in records.items():
            np.testing.assert_array_equal(loaded[name], value)
            assert loaded[name].shape == np.shape(value)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tcaq"
        path.write_bytes(b"NOTANARCHIVE")
        with pytest.raises(ArchiveError):
            load_archive(path)

    def test_truncated_file(self, tmp_path, rng):
        path = save_archive(tmp_path / "x.tcaq", {"w": rng.normal(size=(8,)).astype(np.float32)})
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ArchiveError):
            load_archive(path)

    def test_records_default_to_float32(self, tmp_path, rng):
        path = save_archive(tmp_path / "x.tcaq", {"w": rng.normal(size=(4,))})
        assert load_archive(path)["w"].dtype == np.float32

    def test_float64_records_keep_precision(self, tmp_path):
        value = np.array([1.0 / 3.0, np.pi, 1.0 + 1e-12])
        path = save_archive(tmp_path / "x.tcaq", {"a": value, "b": value}, float64=["a"])
        loaded = load_archive(path)
        assert loaded["a"].dtype == np.float64
        np.testing.assert_array_equal(loaded["a"], value)
        assert loaded["b"].dtype == np.float32
        assert not np.array_equal(loaded["b"], value)

    def test_float64_name_must_exist(self, tmp_path):
        with pytest.raises(ArchiveError):
            save_archive(tmp_path / "x.tcaq", {"a": np.ones(2)}, float64=["missing"])

    def test_reads_float32_only_version(self, tmp_path):
        name = b"w"
        value = np.array([0.5, -2.0], dtype="<f4")
        raw = b"".join([
            b"TCAQTNSR",
            struct.pack("<BI", 1, 1),
            struct.pack("<I", len(name)),
            name,
            struct.pack("<II", 1, 2),
            value.tobytes(),
        ])
        path = tmp_path / "old.tcaq"
        path.write_bytes(raw)
        np.testing.assert_array_equal(load_archive(path)["w"], value)

    def test_unknown_version(self, tmp_path):
        path = tmp_path / "future.tcaq"
        path.write_bytes(b"TCAQTNSR" + struct.pack("<BI", 9, 0))
        with pytest.raises(ArchiveError):
            load_archive(path)

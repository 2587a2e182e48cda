"""Uniform and log2 fake-quantization kernels.

Uniform:  q = clip(round(x / s) + z, 0, 2^b - 1),   x~ = s * (q - z)
Log2:     q = clip(round(-log2(x / s)), 0, L),      x~ = s * 2^-q

Rounding is half-to-even (``np.rint``). The log2 quantizer reserves
``LOG2_ZERO_CODE`` for exact zeros, which dequantize to 0.
"""

import logging
from typing import Union

import numpy as np

from ..tensor import Tensor
from ..tensor.ops import Op, forward, register_op
from .params import LOG2_ZERO_CODE, QuantizationError, QuantizerKind, QuantParams

logger = logging.getLogger(__name__)

ArrayLike = Union[Tensor, np.ndarray]


def _array(x: ArrayLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)


def _require(qp: QuantParams, kind: QuantizerKind) -> None:
    if qp.kind != kind:
        raise QuantizationError(f"Expected {kind.value} parameters, got {qp.kind.value}")
    if np.any(qp.scale <= 0):
        raise QuantizationError(f"Quantization scale must be positive, got {qp.scale}")


def quantize_uniform(x: ArrayLike, qp: QuantParams) -> np.ndarray:
    """Map floats to uniform integer codes in [0, 2^bits - 1]."""
    _require(qp, QuantizerKind.UNIFORM)
    data = _array(x)
    s, z = qp.broadcast(data.ndim)
    codes = np.rint(data / s) + z
    return np.clip(codes, 0, qp.qmax).astype(np.int64)


def dequantize_uniform(codes: np.ndarray, qp: QuantParams, dtype: type = np.float32) -> np.ndarray:
    """Map uniform codes back to floats: s * (q - z)."""
    s, z = qp.broadcast(np.ndim(codes))
    return (s * (np.asarray(codes) - z)).astype(dtype)


def quantize_log2(x: ArrayLike, qp: QuantParams) -> np.ndarray:
    """
    Map non-negative floats to log2 codes in [0, L].

    Raises:
        QuantizationError: If any input is negative.
    """
    _require(qp, QuantizerKind.LOG2)
    data = _array(x)
    if np.any(data < 0):
        raise QuantizationError(
            f"log2 quantizer needs non-negative inputs, got minimum {float(data.min())}"
        )
    s, _ = qp.broadcast(data.ndim)
    with np.errstate(divide="ignore"):
        levels = np.rint(-np.log2(data / s))
    codes = np.clip(levels, 0, qp.qmax)
    return np.where(data == 0, LOG2_ZERO_CODE, codes).astype(np.int64)


def dequantize_log2(codes: np.ndarray, qp: QuantParams, dtype: type = np.float32) -> np.ndarray:
    """Map log2 codes back to floats: s * 2^-q, zero code to 0."""
    codes = np.asarray(codes)
    s, _ = qp.broadcast(codes.ndim)
    values = s * np.exp2(-np.maximum(codes, 0).astype(np.float64))
    return np.where(codes == LOG2_ZERO_CODE, 0.0, values).astype(dtype)


def fake_quant_array(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Quantize-then-dequantize on a bare array, preserving its dtype."""
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float32
    if qp.kind == QuantizerKind.UNIFORM:
        return dequantize_uniform(quantize_uniform(x, qp), qp, dtype=dtype)
    return dequantize_log2(quantize_log2(x, qp), qp, dtype=dtype)


def in_clip_range(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Mask of elements the quantizer does not clip."""
    s, z = qp.broadcast(x.ndim)
    if qp.kind == QuantizerKind.UNIFORM:
        level = x / s + z
        return (level >= 0) & (level <= qp.qmax)
    return (x >= s * np.float32(2.0 ** -qp.qmax)) & (x <= s)


@register_op
class FakeQuant(Op):
    """Fake quantization with a straight-through gradient inside the clip range."""

    kind = "fake_quant"

    @staticmethod
    def forward(saved, x, params):
        return fake_quant_array(x, params)

    @staticmethod
    def backward(saved, grad, x, params):
        return (grad * in_clip_range(x, params),)


def fake_quant(x: Tensor, qp: QuantParams) -> Tensor:
    """Differentiable fake quantization of a tensor."""
    return forward("fake_quant", (x,), {"params": qp})

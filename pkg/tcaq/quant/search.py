"""Quantization parameter search: min-max initialization and MSE scale scan."""

import logging
from typing import Iterable, Optional, Union

import numpy as np

from ..tensor import Tensor
from .kernels import fake_quant_array
from .params import SCALE_FLOOR, Granularity, QuantizerKind, QuantParams, QuantParamsError

logger = logging.getLogger(__name__)

Samples = Union[Tensor, np.ndarray, Iterable[Union[Tensor, np.ndarray]]]

DEFAULT_GRID = 100
BETA_RANGE = (0.2, 1.2)


def _chunks(samples: Samples) -> list[np.ndarray]:
    if isinstance(samples, Tensor):
        return [samples.data]
    if isinstance(samples, np.ndarray):
        return [samples]
    return [s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float32) for s in samples]


def _gather(samples: Samples, granularity: Granularity, axis: int) -> np.ndarray:
    """Stack samples as (1, M) for per-tensor or (C, M) for per-channel."""
    chunks = _chunks(samples)
    if not chunks or all(c.size == 0 for c in chunks):
        raise QuantParamsError("Parameter search needs at least one sample")
    if granularity == Granularity.PER_TENSOR:
        return np.concatenate([c.reshape(-1) for c in chunks])[None, :]
    rows = [np.moveaxis(c, axis, 0).reshape(c.shape[axis], -1) for c in chunks]
    if len({r.shape[0] for r in rows}) != 1:
        raise QuantParamsError(f"Per-channel samples disagree on channel count along axis {axis}")
    return np.concatenate(rows, axis=1)


def _subsample(data: np.ndarray, max_samples: Optional[int]) -> np.ndarray:
    if max_samples is None or data.shape[1] <= max_samples:
        return data
    index = np.linspace(0, data.shape[1] - 1, max_samples).round().astype(np.int64)
    return data[:, index]


def _params_for_range(
    lo: np.ndarray,
    hi: np.ndarray,
    bits: int,
    kind: QuantizerKind,
    granularity: Granularity,
    axis: int,
) -> QuantParams:
    qmax = 2 ** bits - 1
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if kind == QuantizerKind.UNIFORM:
        degenerate = hi <= lo
        # the representable range always contains zero
        lo, hi = np.minimum(lo, 0.0), np.maximum(hi, 0.0)
        span = hi - lo
        scale = np.maximum(np.where(degenerate, SCALE_FLOOR, span / qmax), SCALE_FLOOR)
        zero = np.where(degenerate, (qmax + 1) // 2, np.clip(np.rint(-lo / scale), 0, qmax))
    else:
        scale = np.maximum(hi, SCALE_FLOOR)
        zero = np.zeros_like(scale)
    if granularity == Granularity.PER_TENSOR:
        scale, zero = scale.reshape(()), zero.reshape(())
    return QuantParams(kind=kind, bits=bits, scale=scale, zero_point=zero, granularity=granularity, axis=axis)


def search_params_minmax(
    samples: Samples,
    bits: int,
    kind: QuantizerKind = QuantizerKind.UNIFORM,
    granularity: Granularity = Granularity.PER_TENSOR,
    axis: int = 0,
) -> QuantParams:
    """
    Min-max parameter initialization over a stream of sample batches.

    Uniform: s = (max - min) / (2^bits - 1), z = round(-min / s) clipped.
    Log2: s = max. Constant inputs get the 1e-8 scale floor and a centred
    zero point.

    Args:
        samples: A tensor, an array, or an iterable of either.
        bits: Bit width in [2, 8].
        kind: Quantizer family.
        granularity: Per-tensor, or per-channel along ``axis``.
        axis: Channel axis for per-channel parameters.

    Returns:
        The min-max QuantParams.
    """
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    for chunk in _chunks(samples):
        if chunk.size == 0:
            continue
        if granularity == Granularity.PER_TENSOR:
            c_lo, c_hi = np.min(chunk), np.max(chunk)
        else:
            reduce_axes = tuple(i for i in range(chunk.ndim) if i != axis % chunk.ndim)
            c_lo, c_hi = chunk.min(axis=reduce_axes), chunk.max(axis=reduce_axes)
        lo = c_lo if lo is None else np.minimum(lo, c_lo)
        hi = c_hi if hi is None else np.maximum(hi, c_hi)
    if lo is None:
        raise QuantParamsError("Parameter search needs at least one sample")
    return _params_for_range(lo, hi, bits, kind, granularity, axis)


def quant_mse(data: np.ndarray, qp: QuantParams) -> float:
    """Mean squared fake-quantization error of ``qp`` on ``data``."""
    diff = fake_quant_array(data, qp).astype(np.float64) - data
    return float(np.mean(diff * diff))


def search_params_mse(
    samples: Samples,
    bits: int,
    kind: QuantizerKind = QuantizerKind.UNIFORM,
    granularity: Granularity = Granularity.PER_TENSOR,
    grid: int = DEFAULT_GRID,
    axis: int = 0,
    max_samples: Optional[int] = None,
) -> QuantParams:
    """
    Scan clipping ranges beta * [min, max] and keep the lowest-MSE candidate.

    The min-max candidate (beta = 1) is always scanned first, so ties and the
    result both favour it and the chosen MSE never exceeds the min-max MSE.
    Per-channel parameters pick beta independently per channel.

    Args:
        samples: A tensor, an array, or an iterable of either.
        bits: Bit width in [2, 8].
        kind: Quantizer family.
        granularity: Per-tensor, or per-channel along ``axis``.
        grid: Number of beta points on [0.2, 1.2]; at least 2.
        axis: Channel axis for per-channel parameters.
        max_samples: Evenly strided subsample cap per channel row.

    Returns:
        The MSE-optimal QuantParams among the candidates.

    Raises:
        QuantParamsError: If grid < 2 or there are no samples.
    """
    if grid < 2:
        raise QuantParamsError(f"MSE search grid must have at least 2 points, got {grid}")

    data = _subsample(_gather(samples, granularity, axis), max_samples)
    lo = data.min(axis=1)
    hi = data.max(axis=1)
    betas = np.concatenate([[1.0], np.linspace(BETA_RANGE[0], BETA_RANGE[1], grid)])

    # candidates x channels
    errors = np.empty((betas.size, data.shape[0]))
    candidates = []
    for i, beta in enumerate(betas):
        qp = _params_for_range(beta * lo, beta * hi, bits, kind, Granularity.PER_CHANNEL, 0)
        diff = fake_quant_array(data, qp).astype(np.float64) - data
        errors[i] = np.mean(diff * diff, axis=1)
        candidates.append(qp)

    best = np.argmin(errors, axis=0)
    channels = np.arange(data.shape[0])
    scale = np.array([candidates[b].scale[c] for c, b in zip(channels, best)], dtype=np.float32)
    zero = np.array([candidates[b].zero_point[c] for c, b in zip(channels, best)])
    if granularity == Granularity.PER_TENSOR:
        scale, zero = scale.reshape(()), zero.reshape(())
    chosen = QuantParams(kind=kind, bits=bits, scale=scale, zero_point=zero, granularity=granularity, axis=axis)
    logger.debug(
        "MSE search (%s, %d bits, %d channels): beta %s, mse %.3e vs min-max %.3e",
        kind.value, bits, data.shape[0], betas[best][:4], errors[best, channels].mean(), errors[0].mean(),
    )
    return chosen

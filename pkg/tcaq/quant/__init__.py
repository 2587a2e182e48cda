"""Quant module - uniform/log2 fake quantization and parameter search."""

from .kernels import (
    dequantize_log2,
    dequantize_uniform,
    fake_quant,
    fake_quant_array,
    in_clip_range,
    quantize_log2,
    quantize_uniform,
)
from .params import (
    LOG2_ZERO_CODE,
    SCALE_FLOOR,
    Granularity,
    QuantizationError,
    QuantizerKind,
    QuantParams,
    QuantParamsError,
    kind_code,
    kind_from_code,
)
from .search import quant_mse, search_params_minmax, search_params_mse

__all__ = [
    "Granularity",
    "LOG2_ZERO_CODE",
    "QuantParams",
    "QuantParamsError",
    "QuantizationError",
    "QuantizerKind",
    "SCALE_FLOOR",
    "dequantize_log2",
    "dequantize_uniform",
    "fake_quant",
    "fake_quant_array",
    "in_clip_range",
    "kind_code",
    "kind_from_code",
    "quant_mse",
    "quantize_log2",
    "quantize_uniform",
    "search_params_minmax",
    "search_params_mse",
]

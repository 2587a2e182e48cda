"""Calibration module - sampler-driven activation capture across timesteps."""

from .collect import (
    DEFAULT_CHAINS,
    DEFAULT_STEPS,
    CalibrationError,
    CalibrationSample,
    CalibrationSet,
    CalibrationSource,
    calibration_records,
    capture_layer_stats,
    load_calibration,
    resample_calibration_quant,
    sample_calibration_fp,
    save_calibration,
    validate_coverage,
)

__all__ = [
    "CalibrationError",
    "CalibrationSample",
    "CalibrationSet",
    "CalibrationSource",
    "DEFAULT_CHAINS",
    "DEFAULT_STEPS",
    "calibration_records",
    "capture_layer_stats",
    "load_calibration",
    "resample_calibration_quant",
    "sample_calibration_fp",
    "save_calibration",
    "validate_coverage",
]

"""Metrics module - layer errors, Fréchet moment distance and reports."""

from .errors import LayerError, MetricsError, layer_error
from .fmd import fmd, frechet_distance, moment_distance
from .grid import write_png_grid
from .report import (
    ABLATION_FIELDS,
    SCHEMA_VERSION,
    ArmResult,
    MetricReport,
    ReportError,
    emit_report,
    load_report,
    mean_sqnr,
    write_ablation_csv,
)

__all__ = [
    "ABLATION_FIELDS",
    "SCHEMA_VERSION",
    "ArmResult",
    "LayerError",
    "MetricReport",
    "MetricsError",
    "ReportError",
    "emit_report",
    "fmd",
    "frechet_distance",
    "layer_error",
    "load_report",
    "mean_sqnr",
    "moment_distance",
    "write_ablation_csv",
    "write_png_grid",
]

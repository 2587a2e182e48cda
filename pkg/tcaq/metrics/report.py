"""Versioned JSON report and the ablation CSV.

The report is strict JSON: inf, -inf and nan are written as the strings
"inf", "-inf" and "nan" and read back as floats.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from ..errors import TcaqError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# JSON has no literal for these; they are written as strings
NON_FINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}
ARM_FLOAT_FIELDS = ("fmd", "mean_sqnr_db", "seconds")

ABLATION_FIELDS = [
    "arm", "bits_w", "bits_a", "bits_s", "tcr", "daq", "par_rounds", "fmd", "mean_sqnr_db", "seconds",
]


class ReportError(TcaqError):
    """Raised when a report cannot be written or parsed."""
    pass


@dataclass
class ArmResult:
    """One evaluated quantization arm."""
    arm: str
    bits_w: int
    bits_a: int
    bits_s: int
    tcr: bool
    daq: bool
    par_rounds: int
    fmd: float
    mean_sqnr_db: float
    sample_count: int
    seed: int
    seconds: Optional[float] = None

    def to_row(self) -> dict[str, Any]:
        row = {name: getattr(self, name) for name in ABLATION_FIELDS}
        row["tcr"] = int(self.tcr)
        row["daq"] = int(self.daq)
        row["fmd"] = repr(float(self.fmd))
        row["mean_sqnr_db"] = repr(float(self.mean_sqnr_db))
        row["seconds"] = "" if self.seconds is None else f"{self.seconds:.3f}"
        return row


@dataclass
class MetricReport:
    """Everything one evaluate/ablate run measured."""
    config: dict[str, Any] = field(default_factory=dict)
    layers: dict[str, dict[str, float]] = field(default_factory=dict)
    arms: list[ArmResult] = field(default_factory=list)
    fp_fmd: Optional[float] = None
    timings: Optional[dict[str, float]] = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        doc = {
            "schema_version": self.schema_version,
            "config": self.config,
            "layers": self.layers,
            "arms": [asdict(arm) for arm in self.arms],
            "fp_fmd": self.fp_fmd,
        }
        if self.timings is not None:
            doc["timings"] = self.timings
        return encode_non_finite(doc)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "MetricReport":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ReportError(f"Unsupported report schema version {version!r}, expected {SCHEMA_VERSION}")
        timings = doc.get("timings")
        return cls(
            config=doc.get("config", {}),
            layers={
                layer_id: {name: decode_float(v) for name, v in values.items()}
                for layer_id, values in doc.get("layers", {}).items()
            },
            arms=[ArmResult(**decode_arm(arm)) for arm in doc.get("arms", [])],
            fp_fmd=decode_float(doc.get("fp_fmd")),
            timings=None if timings is None else {k: decode_float(v) for k, v in timings.items()},
            schema_version=version,
        )


def encode_non_finite(value: Any) -> Any:
    """Replace inf, -inf and nan floats anywhere in a JSON document with strings."""
    if isinstance(value, float) and not math.isfinite(value):
        if math.isnan(value):
            return "nan"
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {k: encode_non_finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [encode_non_finite(v) for v in value]
    return value


def decode_float(value: Any) -> Any:
    """Inverse of :func:`encode_non_finite` for one numeric field."""
    if isinstance(value, str):
        if value not in NON_FINITE:
            raise ReportError(f"Expected a number, got {value!r}")
        return NON_FINITE[value]
    return value


def decode_arm(doc: dict[str, Any]) -> dict[str, Any]:
    return {k: decode_float(v) if k in ARM_FLOAT_FIELDS else v for k, v in doc.items()}


def mean_sqnr(layers: dict[str, dict[str, float]]) -> float:
    """Mean finite SQNR over layers; nan when none is finite."""
    values = [v["sqnr_db"] for v in layers.values() if math.isfinite(v["sqnr_db"])]
    return float(sum(values) / len(values)) if values else float("nan")


def write_ablation_csv(arms: list[ArmResult], path: Union[str, Path]) -> Path:
    """Write the ablation table; rows keep the order of ``arms``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=ABLATION_FIELDS, lineterminator="\n")
            writer.writeheader()
            for arm in arms:
                writer.writerow(arm.to_row())
    except OSError as e:
        raise ReportError(f"Cannot write ablation CSV {path}: {e}") from e
    return path


def emit_report(report: MetricReport, path: Union[str, Path]) -> tuple[Path, Path]:
    """
    Write the JSON report and the ablation CSV next to it.

    The CSV takes the JSON path with a ``.csv`` suffix.

    Returns:
        (json path, csv path)

    Raises:
        ReportError: If either file cannot be written.
    """
    path = Path(path)
    try:
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False)
    except ValueError as e:
        raise ReportError(f"Report {path} is not JSON-encodable: {e}") from e
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    except OSError as e:
        raise ReportError(f"Cannot write report {path}: {e}") from e
    csv_path = write_ablation_csv(report.arms, path.with_suffix(".csv"))
    logger.info(f"Report written to {path} ({len(report.arms)} arms)")
    return path, csv_path


def load_report(path: Union[str, Path]) -> MetricReport:
    """Parse a report written by :func:`emit_report`."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ReportError(f"Cannot read report {path}: {e}") from e
    return MetricReport.from_dict(doc)

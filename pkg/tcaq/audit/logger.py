"""Run log for quantization pipelines.

Writes one compact JSON object per pipeline event (calibration passes,
TCR and DAQ decisions, reconstruction progress, artifacts) so a run can be
audited after the fact.
"""

import json
import logging
import threading
import time
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Optional

import numpy as np


class RunEventType(Enum):
    """Types of run events."""
    RUN_START = "run_start"
    RUN_END = "run_end"
    COMMAND_FAILED = "command_failed"
    CALIBRATION_SAMPLED = "calibration_sampled"
    TCR_APPLIED = "tcr_applied"
    DAQ_DECIDED = "daq_decided"
    BLOCK_RECONSTRUCTED = "block_reconstructed"
    PAR_ROUND = "par_round"
    ARTIFACT_WRITTEN = "artifact_written"


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass
class RunEvent:
    """Represents a run log entry."""
    timestamp: float
    event_type: RunEventType
    command: Optional[str]
    details: dict[str, Any]
    result: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary for JSON serialization."""
        return {
            "timestamp": self.timestamp,
            "datetime": datetime.fromtimestamp(self.timestamp).isoformat(),
            "event_type": self.event_type.value,
            "command": self.command,
            "details": _jsonable(self.details),
            "result": self.result,
            "error": self.error,
        }

    def to_json(self) -> str:
        """Convert to JSON string."""
        return json.dumps(self.to_dict(), separators=(",", ":"))


class RunLogger:
    """
    JSON-lines run logger.

    Features:
    - One event per line, rotating files
    - Thread-safe lazy initialization
    - Disabled (events dropped) when no log directory is configured
    """

    DEFAULT_LOG_FILE = "run.log"
    DEFAULT_MAX_BYTES = 10 * 1024 * 1024  # 10 MB
    DEFAULT_BACKUP_COUNT = 5

    def __init__(
        self,
        log_dir: Optional[Path] = None,
        log_file: str = DEFAULT_LOG_FILE,
        max_bytes: int = DEFAULT_MAX_BYTES,
        backup_count: int = DEFAULT_BACKUP_COUNT,
    ):
        """
        Initialize the run logger.

        Args:
            log_dir: Directory for log files; None disables the file.
            log_file: Name of the log file.
            max_bytes: Maximum size of each log file before rotation.
            backup_count: Number of backup files to keep.
        """
        self._log_dir = Path(log_dir) if log_dir is not None else None
        self._log_file = log_file
        self._max_bytes = max_bytes
        self._backup_count = backup_count
        self._lock = threading.Lock()
        self._logger: Optional[logging.Logger] = None
        self._handler: Optional[RotatingFileHandler] = None
        self._initialized = False
        self.command: Optional[str] = None

    @property
    def enabled(self) -> bool:
        return self._log_dir is not None

    @property
    def path(self) -> Optional[Path]:
        return self._log_dir / self._log_file if self._log_dir is not None else None

    def _ensure_initialized(self) -> None:
        """Ensure the logger is initialized (lazy initialization)."""
        if self._initialized:
            return

        with self._lock:
            if self._initialized:
                return

            self._log_dir.mkdir(parents=True, exist_ok=True)
            self._handler = RotatingFileHandler(
                filename=str(self.path),
                maxBytes=self._max_bytes,
                backupCount=self._backup_count,
                encoding="utf-8",
            )
            self._handler.setLevel(logging.INFO)
            self._handler.setFormatter(logging.Formatter("%(message)s"))

            self._logger = logging.getLogger("tcaq.run")
            self._logger.setLevel(logging.INFO)
            self._logger.handlers.clear()
            self._logger.addHandler(self._handler)
            self._logger.propagate = False

            self._initialized = True

    def log(self, event: RunEvent) -> None:
        """
        Log a run event.

        Args:
            event: The run event to log.
        """
        if not self.enabled:
            return
        try:
            self._ensure_initialized()
            self._logger.info(event.to_json())
        except Exception:
            # Run-log failures never affect the pipeline
            pass

    def _event(self, event_type: RunEventType, details: dict[str, Any], result: Optional[str] = None,
               error: Optional[str] = None) -> None:
        self.log(RunEvent(
            timestamp=time.time(),
            event_type=event_type,
            command=self.command,
            details=details,
            result=result,
            error=error,
        ))

    def log_run_start(self, command: str, config: dict[str, Any]) -> None:
        """Log the start of a command."""
        self.command = command
        self._event(RunEventType.RUN_START, {"config": config}, result="started")

    def log_run_end(self, command: str, duration: float, outputs: Optional[dict[str, Any]] = None) -> None:
        """Log successful completion of a command."""
        self._event(
            RunEventType.RUN_END,
            {"duration_seconds": round(duration, 2), "outputs": outputs or {}},
            result="succeeded",
        )

    def log_command_failed(self, command: str, error: str, exit_code: int) -> None:
        """Log a failed command."""
        self._event(RunEventType.COMMAND_FAILED, {"exit_code": exit_code}, result="failed", error=error)

    def log_calibration_sampled(self, source: str, n_chains: int, steps: int, layers: int, seconds: float) -> None:
        """Log a calibration sampling pass."""
        self._event(RunEventType.CALIBRATION_SAMPLED, {
            "source": source,
            "n_chains": n_chains,
            "inference_steps": steps,
            "hooked_layers": layers,
            "seconds": round(seconds, 3),
        })

    def log_tcr_applied(self, layer_id: str, spread_before: float, spread_after: float,
                        clamp: Optional[float]) -> None:
        """Log a reparameterized layer."""
        self._event(RunEventType.TCR_APPLIED, {
            "layer_id": layer_id,
            "spread_before": spread_before,
            "spread_after": spread_after,
            "clamp": clamp,
        })

    def log_daq_decided(self, layer_id: str, t: int, chosen: str, r_g: float, note: str = "") -> None:
        """Log one DAQ decision; fallbacks carry a note."""
        self._event(RunEventType.DAQ_DECIDED, {
            "layer_id": layer_id,
            "t": t,
            "chosen": chosen,
            "r_g": r_g,
            "note": note,
        })

    def log_block_reconstructed(self, round_index: int, block: str, start_mse: float, end_mse: float,
                                iterations: int, reverted: bool) -> None:
        """Log one block reconstruction."""
        self._event(RunEventType.BLOCK_RECONSTRUCTED, {
            "round": round_index,
            "block": block,
            "start_mse": start_mse,
            "end_mse": end_mse,
            "iterations": iterations,
            "reverted": reverted,
        })

    def log_par_round(self, round_index: int, source: str, iterations: int, seconds: float) -> None:
        """Log a finished reconstruction round."""
        self._event(RunEventType.PAR_ROUND, {
            "round": round_index,
            "source": source,
            "iterations": iterations,
            "seconds": round(seconds, 3),
        })

    def log_artifact_written(self, kind: str, path: Path) -> None:
        """Log an output file."""
        self._event(RunEventType.ARTIFACT_WRITTEN, {"kind": kind, "path": path})

    def close(self) -> None:
        """Close the run logger and release resources."""
        with self._lock:
            if self._handler:
                self._handler.close()
                self._handler = None
            if self._logger:
                self._logger.handlers.clear()
                self._logger = None
            self._initialized = False


# Global run logger instance
_run_logger: Optional[RunLogger] = None
_run_lock = threading.Lock()


def get_run_logger() -> RunLogger:
    """
    Get the global run logger instance.

    Returns:
        The global RunLogger instance (disabled until configured).
    """
    global _run_logger

    if _run_logger is None:
        with _run_lock:
            if _run_logger is None:
                _run_logger = RunLogger()

    return _run_logger


def configure_run_logger(
    log_dir: Optional[Path] = None,
    log_file: str = RunLogger.DEFAULT_LOG_FILE,
    max_bytes: int = RunLogger.DEFAULT_MAX_BYTES,
    backup_count: int = RunLogger.DEFAULT_BACKUP_COUNT,
) -> RunLogger:
    """
    Configure and return the global run logger.

    Args:
        log_dir: Directory for log files; None disables the run log.
        log_file: Name of the log file.
        max_bytes: Maximum size of each log file before rotation.
        backup_count: Number of backup files to keep.

    Returns:
        The configured RunLogger instance.
    """
    global _run_logger

    with _run_lock:
        if _run_logger:
            _run_logger.close()

        _run_logger = RunLogger(
            log_dir=log_dir,
            log_file=log_file,
            max_bytes=max_bytes,
            backup_count=backup_count,
        )

    return _run_logger

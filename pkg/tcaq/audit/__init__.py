"""Audit module - JSON-lines run log."""

from .logger import RunEvent, RunEventType, RunLogger, configure_run_logger, get_run_logger

__all__ = ["RunEvent", "RunEventType", "RunLogger", "configure_run_logger", "get_run_logger"]

"""Experiment orchestration: configs, cached pipeline stages, report and CLI."""

from .config import ConfigError, load_config
from .pipeline import Pipeline, StageError
from .report import ReportIncomplete, build_report

__all__ = ["ConfigError", "Pipeline", "ReportIncomplete", "StageError", "build_report", "load_config"]

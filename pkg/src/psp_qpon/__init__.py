"""Simulator and security analysis for a passive-state-preparation CV-QKD passive optical network."""

__version__ = "0.1.0"

from .config import ScenarioConfig, load_scenario  # noqa: E402
from .pipeline import run_analytic, run_pipeline, sweep  # noqa: E402
from .report import KeyRateReport, export_report, load_report  # noqa: E402

__all__ = [
    "ScenarioConfig",
    "KeyRateReport",
    "load_scenario",
    "run_pipeline",
    "run_analytic",
    "sweep",
    "export_report",
    "load_report",
]

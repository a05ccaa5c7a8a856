"""Scenario configuration, runners, acceptance suite and command line."""
from .acceptance import AcceptanceSummary, run_acceptance_suite
from .config import SCENARIOS, ConfigError, ExperimentConfig
from .scenarios import ScenarioReport, Verdict, run_scenario

__all__ = ["AcceptanceSummary", "ConfigError", "ExperimentConfig", "SCENARIOS",
           "ScenarioReport", "Verdict", "run_acceptance_suite", "run_scenario"]

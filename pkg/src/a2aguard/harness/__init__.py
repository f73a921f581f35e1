"""Adversarial harness: deterministic worlds, ten attack scenarios, and
the matrix report that runs each against both security stances."""

from .report import render_json, render_text, report_ok, run_matrix, run_scenario
from .scenarios import SCENARIOS, Outcome, Scenario
from .world import StepClock, World, build_world

__all__ = [
    "SCENARIOS",
    "Outcome",
    "Scenario",
    "StepClock",
    "World",
    "build_world",
    "render_json",
    "render_text",
    "report_ok",
    "run_matrix",
    "run_scenario",
]

"""Scenario configuration, figure presets, sweeps, and the spinforge CLI."""

from .config import ConfigError, ScenarioConfig, SweepSpec, load_config, load_sweep
from .runner import run_scenario, run_sweep
from .figures import PRESETS, preset_figure

__all__ = ["ConfigError", "ScenarioConfig", "SweepSpec", "load_config",
           "load_sweep", "run_scenario", "run_sweep", "PRESETS",
           "preset_figure"]

from .harness import (
    MseRow,
    ScenarioConfig,
    ScenarioError,
    load_scenario,
    preset_grid,
    run_scenario,
    run_table,
)
from .pipelines import FitContext, Pipeline, builtin_pipelines, parse_pipeline
from .semisynthetic import biased_subsample, run_semi_synthetic

__all__ = [
    "FitContext",
    "MseRow",
    "Pipeline",
    "ScenarioConfig",
    "ScenarioError",
    "biased_subsample",
    "builtin_pipelines",
    "load_scenario",
    "parse_pipeline",
    "preset_grid",
    "run_scenario",
    "run_semi_synthetic",
    "run_table",
]

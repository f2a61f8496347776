from app.simulation.dgp import (
    DgpSpec,
    OracleAUC,
    generate_population,
    generate_rwd,
    select_validation,
    true_tau0,
)
from app.simulation.report import format_table, metrics_frame, metrics_json
from app.simulation.scenario import (
    SHIFT_ALPHAS,
    SPEC_CELLS,
    MetricsRow,
    ScenarioResult,
    ScenarioSpec,
    run_scenario,
    scenario_kinds,
    select_kinds,
)


__all__ = [
    "DgpSpec",
    "MetricsRow",
    "OracleAUC",
    "SHIFT_ALPHAS",
    "SPEC_CELLS",
    "ScenarioResult",
    "ScenarioSpec",
    "format_table",
    "generate_population",
    "generate_rwd",
    "metrics_frame",
    "metrics_json",
    "run_scenario",
    "scenario_kinds",
    "select_kinds",
    "select_validation",
    "true_tau0",
]

"""Text and JSON renderings of scenario metrics."""

import math
from typing import Any, Dict, List, Optional

import pandas as pd

from app.simulation.scenario import ScenarioResult


SHIFT_TITLES = {"none": "No shift", "moderate": "Moderate shift", "severe": "Severe shift"}


def _clean(value: Optional[float]) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return value


def metrics_frame(results: List[ScenarioResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        for m in result.metrics:
            rows.append(
                {
                    "shift": result.scenario.shift,
                    "spec_cell": result.scenario.spec_cell,
                    "tau0": result.tau0.value,
                    **m.model_dump(),
                }
            )
    return pd.DataFrame(rows)


def metrics_json(results: List[ScenarioResult]) -> Dict[str, Any]:
    """Metrics table with one record per scenario x estimator; NaN becomes null."""
    scenarios = []
    for result in results:
        s = result.scenario
        scenarios.append(
            {
                "shift": s.shift,
                "spec_cell": s.spec_cell,
                "alpha": list(s.alpha),
                "n_reps": s.n_reps,
                "n_boot": s.n_boot,
                "seed": s.seed,
                "tau0": result.tau0.value,
                "tau0_half_width": result.tau0.half_width,
                "metrics": [
                    {k: _clean(v) for k, v in m.model_dump().items()} for m in result.metrics
                ],
            }
        )
    return {"scenarios": scenarios}


def _fmt(value: Optional[float], spec: str) -> str:
    value = _clean(value)
    return "-" if value is None else format(value, spec)


def format_table(results: List[ScenarioResult]) -> str:
    """Plain-text table in the layout of a simulation-study results table."""
    header = (
        f"{'Scenario':<16}{'Cell':<22}{'Estimator':<11}{'tau0':>7}"
        f"{'Bias(%)':>10}{'Bias/SE':>10}{'RMSE':>8}{'CP':>7}"
    )
    lines = [header, "-" * len(header)]
    for result in results:
        title = SHIFT_TITLES[result.scenario.shift]
        for k, m in enumerate(result.metrics):
            lines.append(
                f"{title if k == 0 else '':<16}"
                f"{result.scenario.spec_cell if k == 0 else '':<22}"
                f"{m.estimator:<11}"
                f"{result.tau0.value:>7.3f}"
                f"{_fmt(m.relative_bias_pct, '.3f'):>10}"
                f"{_fmt(m.bias_over_se, '.3f'):>10}"
                f"{_fmt(m.rmse, '.3f'):>8}"
                f"{_fmt(m.coverage, '.3f'):>7}"
            )
        lines.append("")
    return "\n".join(lines)

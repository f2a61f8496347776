import pytest
from pydantic import ValidationError

from app.config import (
    AppConfig,
    RunSettings,
    TruncationSettings,
    config,
    load_run_config,
)


def test_shipped_defaults():
    assert config.solver.tol == 1e-8
    assert config.bootstrap.ci == "normal"
    assert config.truncation.enabled
    assert (config.truncation.lower_pct, config.truncation.upper_pct) == (0.1, 99.9)
    assert config.simulation.oracle_size == 2_000_000


def test_sections_are_strict():
    with pytest.raises(ValidationError):
        AppConfig(solver={"tol": 1e-6}, plotting={})
    with pytest.raises(ValidationError):
        TruncationSettings(lower_pct=50, upper_pct=10)


def test_run_settings():
    settings = RunSettings(command="estimate", validation="v.csv", estimators="naive, cw")
    assert settings.estimators == ["naive", "cw"]
    assert settings.n_boot == 200

    with pytest.raises(ValidationError):
        RunSettings(command="estimate", validation="v.csv", unknown_flag=True)
    with pytest.raises(ValidationError):
        RunSettings(command="estimate")
    with pytest.raises(ValidationError):
        RunSettings(command="compare", cohort_a="a.csv")
    with pytest.raises(ValidationError):
        RunSettings(command="make-fixture")
    with pytest.raises(ValidationError):
        RunSettings(command="estimate", validation="v.csv", n_boot=1)


def test_run_config_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('n-boot = 20\nestimators = "cw,acw"\n', encoding="utf-8")
    assert load_run_config(path) == {"n_boot": 20, "estimators": "cw,acw"}

    path.write_text("[bootstrap]\nn_boot = 20\n", encoding="utf-8")
    with pytest.raises(ValueError, match="top-level"):
        load_run_config(path)

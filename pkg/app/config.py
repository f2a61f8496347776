import threading
import tomllib
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


def get_project_root() -> Path:
    """Get the project root directory"""
    return Path(__file__).resolve().parent.parent


PROJECT_ROOT = get_project_root()


class SolverSettings(BaseModel):
    """Entropy-balancing solver options"""

    tol: float = Field(1e-8, description="Max-norm tolerance on the moment residual")
    max_iter: int = Field(200, description="Maximum Newton iterations")
    lambda_cap: float = Field(
        50.0, description="Max-norm bound on standardized multipliers before infeasibility"
    )
    standardize: bool = Field(True, description="Center/scale features before solving")
    armijo: float = Field(1e-4, description="Sufficient-decrease constant of the line search")
    ridge: float = Field(1e-10, description="Hessian ridge factor, multiplied by its trace")


class SamplingSettings(BaseModel):
    """Logistic sampling-score model options"""

    max_iter: int = Field(50, description="Maximum IRLS iterations")
    deviance_tol: float = Field(1e-10, description="Convergence bound on |Δdeviance|")
    grad_tol: float = Field(1e-8, description="Convergence bound on the score max-norm")
    coef_cap: float = Field(
        30.0, description="Max-norm bound on standardized coefficients before separation"
    )
    basis: Optional[List[str]] = Field(
        None,
        description="Term list for the sampling design (None = the calibration feature map)",
    )


class TruncationSettings(BaseModel):
    """Quantile truncation of per-subject weights"""

    enabled: bool = Field(True, description="Whether to truncate weights")
    lower_pct: float = Field(0.1, description="Lower percentile")
    upper_pct: float = Field(99.9, description="Upper percentile")

    @model_validator(mode="after")
    def check_range(self) -> "TruncationSettings":
        if not 0 <= self.lower_pct < self.upper_pct <= 100:
            raise ValueError("truncation percentiles must satisfy 0 <= lower < upper <= 100")
        return self


class OutcomeSettings(BaseModel):
    """Outcome-model and U-statistic options"""

    basis_1: Optional[List[str]] = Field(
        None, description="Term list for the D=1 model (None = main effects)"
    )
    basis_0: Optional[List[str]] = Field(
        None, description="Term list for the D=0 model (None = main effects)"
    )
    ties: Literal["strict", "half"] = Field("strict", description="Tie policy for Y_i = Y_j")
    block_size: int = Field(512, description="Row block size for the normal-kernel sums")


class BootstrapSettings(BaseModel):
    """Bootstrap inference options"""

    n_boot: int = Field(200, description="Number of bootstrap resamples")
    ci: Literal["normal", "percentile"] = Field("normal", description="Interval type")
    max_failure_rate: float = Field(
        0.05, description="Largest tolerated share of failed resamples"
    )
    threads: Optional[int] = Field(
        None, description="Worker threads (None = available cores)"
    )


class SimulationSettings(BaseModel):
    """Monte-Carlo replication defaults"""

    reps: int = Field(200, description="Replications per scenario")
    n_boot: int = Field(100, description="Bootstrap resamples per replication")
    n_pop: int = Field(50_000, description="Finite validation-population size")
    n_val: int = Field(800, description="Validation cohort size")
    m_rwd: int = Field(8_000, description="RWD sample size")
    oracle_size: int = Field(2_000_000, description="Sample size for the true-AUC oracle")
    wrong_sampling_terms: List[str] = Field(
        default_factory=lambda: ["x2", "x3"],
        description="Sampling-model terms when that model is misspecified",
    )
    wrong_outcome_terms: List[str] = Field(
        default_factory=lambda: ["x2", "x3"],
        description="Outcome-model terms when that model is misspecified",
    )


class RunSettings(BaseModel):
    """One CLI invocation: a ``--config`` file merged under the command-line flags"""

    command: Literal["estimate", "compare", "simulate", "make-fixture"]
    validation: Optional[Path] = Field(None, description="Validation cohort CSV")
    rwd: Optional[Path] = Field(None, description="RWD cohort CSV (covariates and response)")
    target_sample: Optional[Path] = Field(None, description="Target-sample CSV (covariates only)")
    target_summary: Optional[Path] = Field(None, description="Target summary statistics JSON")
    cohort_a: Optional[Path] = None
    cohort_b: Optional[Path] = None
    x_columns: Optional[List[str]] = None
    y_column: str = "y"
    d_column: str = "d"
    weight_column: Optional[str] = None
    on_missing: Literal["drop", "error"] = "drop"
    estimators: Optional[List[str]] = Field(
        default_factory=lambda: ["naive"], description="None runs the whole simulation grid"
    )
    feature_map: Literal["g1", "g2"] = "g1"
    sampling_basis: Optional[List[str]] = None
    outcome_basis_1: Optional[List[str]] = None
    outcome_basis_0: Optional[List[str]] = None
    truncate: bool = True
    trunc_lower: float = 0.1
    trunc_upper: float = 99.9
    ties: Literal["strict", "half"] = "strict"
    benchmark: Literal["a", "b", "mixture"] = "mixture"
    n_boot: int = Field(200, ge=0)
    seed: Optional[int] = Field(None, ge=0)
    ci: Literal["normal", "percentile"] = "normal"
    threads: Optional[int] = Field(None, gt=0)
    output: Optional[Path] = None
    shift: Literal["none", "moderate", "severe", "all"] = "none"
    spec_cell: Literal[
        "both_correct", "sm_correct_om_wrong", "sm_wrong_om_correct", "both_wrong", "all"
    ] = "both_correct"
    reps: int = Field(200, gt=0)
    oracle_size: int = Field(2_000_000, gt=0)
    n_pop: int = Field(50_000, gt=0)
    n_val: int = Field(800, gt=0)
    m_rwd: int = Field(8_000, gt=0)
    wrong_sampling_terms: Optional[List[str]] = None
    wrong_outcome_terms: Optional[List[str]] = None

    class Config:
        extra = "forbid"

    @field_validator(
        "x_columns",
        "estimators",
        "sampling_basis",
        "outcome_basis_1",
        "outcome_basis_0",
        "wrong_sampling_terms",
        "wrong_outcome_terms",
        mode="before",
    )
    @classmethod
    def split_lists(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @model_validator(mode="after")
    def check_command(self) -> "RunSettings":
        if self.command == "estimate" and self.validation is None:
            raise ValueError("estimate needs a validation cohort")
        if self.command == "compare" and (self.cohort_a is None or self.cohort_b is None):
            raise ValueError("compare needs both cohort_a and cohort_b")
        if self.command in ("simulate", "make-fixture") and self.seed is None:
            raise ValueError(f"{self.command} needs an explicit seed")
        if self.command in ("estimate", "compare") and not self.estimators:
            raise ValueError(f"{self.command} needs at least one estimator")
        if self.command in ("estimate", "compare") and self.n_boot < 2:
            raise ValueError("n_boot must be at least 2")
        if self.truncate and not 0 <= self.trunc_lower < self.trunc_upper <= 100:
            raise ValueError("truncation percentiles must satisfy 0 <= lower < upper <= 100")
        return self


def load_run_config(path: Path) -> dict:
    """Read a run-config file of top-level ``key = value`` lines (TOML syntax)."""
    with Path(path).open("rb") as f:
        raw = tomllib.load(f)
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"run-config files take top-level keys only, got tables {nested}")
    return {k.replace("-", "_"): v for k, v in raw.items()}


class AppConfig(BaseModel):
    solver: SolverSettings = Field(default_factory=SolverSettings)
    sampling: SamplingSettings = Field(default_factory=SamplingSettings)
    truncation: TruncationSettings = Field(default_factory=TruncationSettings)
    outcome: OutcomeSettings = Field(default_factory=OutcomeSettings)
    bootstrap: BootstrapSettings = Field(default_factory=BootstrapSettings)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)

    class Config:
        extra = "forbid"


class Config:
    _instance = None
    _lock = threading.Lock()
    _initialized = False

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if not self._initialized:
            with self._lock:
                if not self._initialized:
                    self._config = None
                    self._load_initial_config()
                    self._initialized = True

    @staticmethod
    def _get_config_path() -> Optional[Path]:
        root = PROJECT_ROOT
        config_path = root / "config" / "config.toml"
        if config_path.exists():
            return config_path
        example_path = root / "config" / "config.example.toml"
        if example_path.exists():
            return example_path
        return None

    def _load_config(self) -> dict:
        config_path = self._get_config_path()
        if config_path is None:
            return {}
        with config_path.open("rb") as f:
            return tomllib.load(f)

    def _load_initial_config(self):
        raw_config = self._load_config()
        self._config = AppConfig(
            **{k: v for k, v in raw_config.items() if k in AppConfig.model_fields}
        )

    @property
    def solver(self) -> SolverSettings:
        return self._config.solver

    @property
    def sampling(self) -> SamplingSettings:
        return self._config.sampling

    @property
    def truncation(self) -> TruncationSettings:
        return self._config.truncation

    @property
    def outcome(self) -> OutcomeSettings:
        return self._config.outcome

    @property
    def bootstrap(self) -> BootstrapSettings:
        return self._config.bootstrap

    @property
    def simulation(self) -> SimulationSettings:
        return self._config.simulation

    @property
    def root_path(self) -> Path:
        """Get the root path of the application"""
        return PROJECT_ROOT


config = Config()

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from app import __version__
from app.cohort import CohortSchema, load_cohort, read_header, write_cohort
from app.config import RunSettings, config, load_run_config
from app.estimator import EstimatorKind, StudyData, parse_kinds
from app.exceptions import InputError, ShiftAUCError
from app.features import SummaryStatistics
from app.inference import bootstrap_many, compare, stream
from app.logger import define_log_level, logger
from app.schema import Cohort, CohortRole
from app.simulation import (
    SHIFT_ALPHAS,
    SPEC_CELLS,
    DgpSpec,
    ScenarioSpec,
    format_table,
    generate_population,
    generate_rwd,
    metrics_json,
    run_scenario,
    select_validation,
    true_tau0,
)
from app.simulation.scenario import STREAM_ORACLE


FIXTURE_STREAM = 20


class JsonArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors are JSON bodies with exit code 2."""

    def error(self, message):
        _emit_error({"error": "UsageError", "message": message, "details": {}})
        sys.exit(2)


def _emit_error(body: Dict[str, Any]) -> None:
    print(json.dumps(body, indent=2), file=sys.stderr)


def _csv_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _percentiles(text: str) -> List[float]:
    parts = _csv_list(text)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected LOWER,UPPER")
    return [float(p) for p in parts]


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(
        prog="shiftauc",
        description="Biomarker AUC estimation under covariate shift",
    )
    parser.add_argument("--version", action="version", version=f"shiftauc {__version__}")
    parser.add_argument("--verbose", action="store_true", help="Show debug logs in console")
    parser.add_argument("--config", type=Path, help="Run-config file of key = value lines")
    parser.add_argument("--threads", type=int, help="Worker threads (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=JsonArgumentParser)

    def data_flags(p):
        p.add_argument("--x-columns", type=_csv_list, help="Covariate columns, comma separated")
        p.add_argument("--y-column", help="Biomarker column (default y)")
        p.add_argument("--d-column", help="Response column (default d)")
        p.add_argument("--weight-column", help="Design-weight column of the target cohort")
        p.add_argument("--on-missing", choices=["drop", "error"])

    def model_flags(p):
        p.add_argument("--feature-map", choices=["g1", "g2"])
        p.add_argument("--sampling-basis", type=_csv_list, help="Sampling-model terms")
        p.add_argument("--outcome-basis-1", type=_csv_list, help="D=1 outcome-model terms")
        p.add_argument("--outcome-basis-0", type=_csv_list, help="D=0 outcome-model terms")
        p.add_argument("--truncate", type=_percentiles, help="Weight percentiles LOWER,UPPER")
        p.add_argument("--no-truncate", action="store_true", help="Disable weight truncation")
        p.add_argument("--ties", choices=["strict", "half"])
        p.add_argument("--n-boot", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--ci", choices=["normal", "percentile"])
        p.add_argument("--output", type=Path, help="JSON report path (default: stdout)")

    est = sub.add_parser("estimate", help="Estimate the target-population AUC")
    est.add_argument("--validation", type=Path)
    est.add_argument("--rwd", type=Path, help="RWD CSV with covariates and response")
    est.add_argument("--target-sample", type=Path, help="Target-sample CSV with covariates")
    est.add_argument("--target-summary", type=Path, help="Target summary statistics JSON")
    est.add_argument("--estimators", type=_csv_list, help="e.g. naive,ipsw,cw,om,om_rwd,acw,aipsw")
    data_flags(est)
    model_flags(est)

    cmp_ = sub.add_parser("compare", help="Benchmark two cohorts to a common target")
    cmp_.add_argument("--cohort-a", type=Path)
    cmp_.add_argument("--cohort-b", type=Path)
    cmp_.add_argument("--benchmark", choices=["a", "b", "mixture"])
    cmp_.add_argument("--estimator", dest="estimators", type=_csv_list)
    data_flags(cmp_)
    model_flags(cmp_)

    sim = sub.add_parser("simulate", help="Run the Monte-Carlo scenario grid")
    sim.add_argument("--shift", choices=["none", "moderate", "severe", "all"])
    sim.add_argument("--spec-cell", choices=list(SPEC_CELLS) + ["all"])
    sim.add_argument("--reps", type=int)
    sim.add_argument("--boot", dest="n_boot", type=int, help="Bootstrap resamples (0 = none)")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--oracle-size", type=int)
    sim.add_argument("--n-pop", type=int, help="Population size per replicate")
    sim.add_argument("--n-val", type=int, help="Validation cohort size")
    sim.add_argument("--m-rwd", type=int, help="RWD sample size")
    sim.add_argument(
        "--estimators", type=_csv_list, help="Subset of the grid, e.g. naive,cw,acw(g1)"
    )
    sim.add_argument("--wrong-sampling-terms", type=_csv_list, help="Misspecified sampling terms")
    sim.add_argument("--wrong-outcome-terms", type=_csv_list, help="Misspecified outcome terms")
    sim.add_argument("--output", type=Path, help="Output directory")

    fix = sub.add_parser("make-fixture", help="Write simulated cohorts as CSV")
    fix.add_argument("--shift", choices=["none", "moderate", "severe"])
    fix.add_argument("--seed", type=int)
    fix.add_argument("--n-pop", type=int)
    fix.add_argument("--n-val", type=int)
    fix.add_argument("--m-rwd", type=int)
    fix.add_argument("--output", type=Path, help="Output directory")
    return parser


def _defaults(command: str) -> Dict[str, Any]:
    """Settings drawn from config/config.toml before the run-config and flags."""
    if command in ("simulate", "make-fixture"):
        sim = config.simulation
        return {
            "n_boot": sim.n_boot,
            "reps": sim.reps,
            "oracle_size": sim.oracle_size,
            "n_pop": sim.n_pop,
            "n_val": sim.n_val,
            "m_rwd": sim.m_rwd,
            "estimators": None,
            "wrong_sampling_terms": sim.wrong_sampling_terms,
            "wrong_outcome_terms": sim.wrong_outcome_terms,
        }
    trunc = config.truncation
    return {
        "estimators": ["cw"] if command == "compare" else ["naive"],
        "n_boot": config.bootstrap.n_boot,
        "ci": config.bootstrap.ci,
        "ties": config.outcome.ties,
        "truncate": trunc.enabled,
        "trunc_lower": trunc.lower_pct,
        "trunc_upper": trunc.upper_pct,
        "seed": 0,
    }


def resolve_settings(args: argparse.Namespace) -> RunSettings:
    """Configured defaults, then the run-config file, then every flag given."""
    values: Dict[str, Any] = _defaults(args.command)
    if args.config is not None:
        try:
            values.update(load_run_config(args.config))
        except (OSError, ValueError) as e:
            raise InputError(f"cannot read run-config {args.config}: {e}") from e
    flags = {
        k: v
        for k, v in vars(args).items()
        if v is not None and k not in ("config", "verbose", "truncate", "no_truncate")
    }
    values.update(flags)
    if getattr(args, "truncate", None) is not None:
        values.update(truncate=True, trunc_lower=args.truncate[0], trunc_upper=args.truncate[1])
    if getattr(args, "no_truncate", False):
        values["truncate"] = False
    try:
        return RunSettings(**values)
    except ValidationError as e:
        raise InputError(
            "invalid run configuration",
            {"errors": [f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()]},
        ) from e


def _write_atomic(files: Dict[Path, str]) -> None:
    """Stage every file in a temp file, then rename all into place."""
    staged = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)
        logger.info(f"Wrote {path}")


def _emit(settings: RunSettings, payload: Dict[str, Any]) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if settings.output is None:
        sys.stdout.write(text)
    else:
        _write_atomic({settings.output: text})


def _schema(settings: RunSettings, sample: Path) -> CohortSchema:
    x_columns = settings.x_columns
    if not x_columns:
        reserved = {settings.y_column, settings.d_column, settings.weight_column}
        x_columns = [c for c in read_header(sample) if c not in reserved]
    return CohortSchema(
        x_columns=x_columns,
        y_column=settings.y_column,
        d_column=settings.d_column,
        weight_column=settings.weight_column,
    )


def _kinds(settings: RunSettings) -> List[EstimatorKind]:
    return parse_kinds(
        settings.estimators,
        feature_map=settings.feature_map,
        sampling_basis=settings.sampling_basis,
        outcome_terms_1=settings.outcome_basis_1,
        outcome_terms_0=settings.outcome_basis_0,
        truncation=(settings.trunc_lower, settings.trunc_upper) if settings.truncate else None,
        ties=settings.ties,
    )


def _record(report) -> Dict[str, Any]:
    record = report.model_dump()
    record["value"] = report.point
    record["numerator"] = report.diagnostics.get("numerator")
    record["denominator"] = report.diagnostics.get("denominator")
    return record


def cmd_estimate(settings: RunSettings) -> int:
    schema = _schema(settings, settings.validation)
    validation_schema = schema.model_copy(update={"weight_column": None})
    validation = load_cohort(
        settings.validation, CohortRole.VALIDATION, validation_schema, settings.on_missing
    )
    rwd = None
    if settings.rwd is not None:
        rwd = load_cohort(settings.rwd, CohortRole.RWD, schema, settings.on_missing)
    elif settings.target_sample is not None:
        rwd = load_cohort(
            settings.target_sample, CohortRole.TARGET_SAMPLE, schema, settings.on_missing
        )
    summary = None
    if settings.target_summary is not None:
        summary = SummaryStatistics.from_json(settings.target_summary, schema.x_columns)
    data = StudyData(validation=validation, rwd=rwd, target_summary=summary)

    reports = bootstrap_many(
        _kinds(settings),
        data,
        settings.n_boot,
        settings.seed,
        settings.ci,
        settings.threads,
        strict=False,
    )
    _emit(settings, {"reports": [_record(r) for r in reports]})
    return 0


def cmd_compare(settings: RunSettings) -> int:
    schema = _schema(settings, settings.cohort_a).model_copy(update={"weight_column": None})
    cohort_a = load_cohort(settings.cohort_a, CohortRole.VALIDATION, schema, settings.on_missing)
    cohort_b = load_cohort(settings.cohort_b, CohortRole.VALIDATION, schema, settings.on_missing)
    kinds = _kinds(settings)
    if len(kinds) != 1:
        raise InputError("compare takes exactly one estimator", {"estimators": settings.estimators})
    report = compare(
        cohort_a,
        cohort_b,
        settings.benchmark,
        kinds[0],
        settings.n_boot,
        settings.seed,
        settings.ci,
        settings.threads,
        strict=False,
    )
    _emit(settings, report.model_dump())
    return 0


def cmd_simulate(settings: RunSettings) -> int:
    shifts = list(SHIFT_ALPHAS) if settings.shift == "all" else [settings.shift]
    cells = list(SPEC_CELLS) if settings.spec_cell == "all" else [settings.spec_cell]
    # sampling only selects the validation cohort; the target population is shared
    tau0 = true_tau0(
        DgpSpec(n_pop=settings.n_pop, n_val=settings.n_val, m_rwd=settings.m_rwd),
        settings.oracle_size,
        stream(settings.seed, 0, STREAM_ORACLE),
    )
    results = []
    for shift in shifts:
        for cell in cells:
            scenario = ScenarioSpec(
                shift=shift,
                spec_cell=cell,
                n_reps=settings.reps,
                n_boot=settings.n_boot,
                seed=settings.seed,
                dgp=DgpSpec(
                    sampling_alpha=SHIFT_ALPHAS[shift],
                    n_pop=settings.n_pop,
                    n_val=settings.n_val,
                    m_rwd=settings.m_rwd,
                ),
                oracle_size=settings.oracle_size,
                threads=settings.threads,
                estimators=settings.estimators,
                wrong_sampling_terms=settings.wrong_sampling_terms,
                wrong_outcome_terms=settings.wrong_outcome_terms,
            )
            results.append(run_scenario(scenario, tau0=tau0))

    out = settings.output or Path("simulation")
    replicates = pd.concat([r.replicates for r in results], ignore_index=True)
    table = format_table(results)
    _write_atomic(
        {
            out / "replicates.csv": replicates.to_csv(index=False, float_format="%.17g"),
            out / "metrics.json": json.dumps(metrics_json(results), indent=2) + "\n",
            out / "table.txt": table + "\n",
        }
    )
    print(table)
    return 0


def cmd_make_fixture(settings: RunSettings) -> int:
    spec = DgpSpec(
        sampling_alpha=SHIFT_ALPHAS[settings.shift if settings.shift != "all" else "none"],
        n_pop=settings.n_pop,
        n_val=settings.n_val,
        m_rwd=settings.m_rwd,
    )
    rng = stream(settings.seed, 0, FIXTURE_STREAM)
    population = generate_population(spec, spec.n_pop, rng)
    validation = select_validation(population, spec.sampling_alpha, spec.n_val, rng)
    rwd = generate_rwd(spec, rng)
    target = Cohort(x=rwd.x, role=CohortRole.TARGET_SAMPLE, column_names=rwd.column_names)
    summary = SummaryStatistics.from_cohort(rwd)

    out = settings.output or Path("fixture")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        texts = {}
        for name, cohort in (("validation", validation), ("rwd", rwd), ("target_sample", target)):
            texts[out / f"{name}.csv"] = write_cohort(cohort, tmp / f"{name}.csv").read_text(
                encoding="utf-8"
            )
        texts[out / "target_summary.json"] = json.dumps(summary.model_dump(), indent=2) + "\n"
        _write_atomic(texts)
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "make-fixture": cmd_make_fixture,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        define_log_level(print_level="DEBUG", name="shiftauc")
    else:
        define_log_level(print_level="INFO", name="shiftauc")

    try:
        settings = resolve_settings(args)
        return COMMANDS[settings.command](settings)
    except ValidationError as e:
        logger.error(f"invalid input: {e}")
        _emit_error({"error": "InputError", "message": str(e), "details": {}})
        return 2
    except ShiftAUCError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        _emit_error(e.to_dict())
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        path = None if e.filename is None else str(e.filename)
        _emit_error({"error": "InputError", "message": str(e), "details": {"path": path}})
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        _emit_error({"error": "InternalError", "message": str(e), "details": {}})
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Cohort ingestion, validation and serialization.

CSV inputs are comma separated, UTF-8, with a header row. Covariates must be
numeric (categorical covariates have to be encoded before loading). The
response column accepts only the literals ``0`` and ``1``.
"""

import re
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from app.exceptions import (
    BadValue,
    DegenerateResponse,
    EmptyCohort,
    InputError,
    MissingColumn,
    SchemaMismatch,
)
from app.logger import logger
from app.schema import Cohort, CohortRole


class CohortSchema(BaseModel):
    """Maps CSV columns onto cohort fields."""

    x_columns: List[str] = Field(..., min_length=1, description="Covariate columns, in order")
    y_column: Optional[str] = Field("y", description="Biomarker column")
    d_column: Optional[str] = Field("d", description="Binary response column")
    weight_column: Optional[str] = Field(None, description="Design-weight column")

    def required(self, role: CohortRole) -> List[str]:
        cols = list(self.x_columns)
        if role == CohortRole.VALIDATION:
            cols += [self.y_column, self.d_column]
        elif role == CohortRole.RWD:
            cols += [self.d_column]
        if self.weight_column:
            cols.append(self.weight_column)
        return cols


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        return float("nan")


def _parse_real(raw: pd.Series, column: str) -> np.ndarray:
    # float() is correctly rounded, so written cohorts load back bit for bit
    values = raw.map(_to_float).to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise BadValue(
            f"non-numeric value {raw.iloc[row]!r} in column {column!r} at row {row}",
            {"column": column, "row": row, "line": row + 2},
        )
    return values


def _parse_binary(raw: pd.Series, column: str) -> np.ndarray:
    stripped = raw.str.strip()
    bad = ~stripped.isin(["0", "1"])
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise BadValue(
            f"response must be 0 or 1, got {raw.iloc[row]!r} in column {column!r} at row {row}",
            {"column": column, "row": row, "line": row + 2},
        )
    return stripped.astype(int).to_numpy()


_PARSER_LINE = re.compile(r"line (\d+)")


def read_csv(path: Union[str, Path], **kwargs) -> pd.DataFrame:
    """``pd.read_csv`` with I/O and tokenizer failures raised as input errors."""
    path = Path(path)
    try:
        return pd.read_csv(path, encoding="utf-8", **kwargs)
    except FileNotFoundError as e:
        raise InputError(f"{path}: no such file", {"path": str(path)}) from e
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}", {"path": str(path)}) from e
    except UnicodeDecodeError as e:
        raise BadValue(
            f"{path.name}: not valid UTF-8 at byte {e.start}", {"path": str(path), "byte": e.start}
        ) from e
    except pd.errors.EmptyDataError as e:
        raise EmptyCohort(f"{path.name}: file is empty", {"path": str(path)}) from e
    except pd.errors.ParserError as e:
        details = {"path": str(path)}
        match = _PARSER_LINE.search(str(e))
        if match:
            line = int(match.group(1))
            details.update(row=line - 2, line=line)
        raise BadValue(f"{path.name}: malformed row ({str(e).strip()})", details) from e


def read_header(path: Union[str, Path]) -> List[str]:
    return [str(c).strip() for c in read_csv(path, nrows=0).columns]


def load_cohort(
    path: Union[str, Path],
    role: Union[CohortRole, str],
    schema: CohortSchema,
    on_missing: Literal["drop", "error"] = "drop",
) -> Cohort:
    """Read a CSV file into a validated cohort.

    Rows with an empty required field are dropped (with their indices logged)
    or, when ``on_missing="error"``, rejected with a :class:`BadValue`.
    Row order follows the file.
    """
    role = CohortRole(role)
    path = Path(path)
    frame = read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.flatnonzero(short)[0])
        raise BadValue(
            f"{path.name}: row {row} has fewer fields than the header",
            {"row": row, "line": row + 2},
        )

    if frame.empty:
        raise EmptyCohort(f"{path.name}: no data rows", {"role": role.value})

    required = schema.required(role)
    absent = [str(c) for c in required if c is None or c not in frame.columns]
    if absent:
        raise MissingColumn(
            f"{path.name}: missing column(s) {', '.join(absent)} for role {role.value}",
            {"missing": absent, "role": role.value},
        )

    cells = frame[required].apply(lambda col: col.str.strip())
    incomplete = (cells == "").any(axis=1).to_numpy()
    if incomplete.any():
        rows = np.flatnonzero(incomplete).tolist()
        if on_missing == "error":
            raise BadValue(
                f"{path.name}: missing required value at row {rows[0]}",
                {"rows": rows},
            )
        logger.warning(f"{path.name}: dropping {len(rows)} incomplete row(s): {rows[:20]}")
        frame = frame.loc[~incomplete].reset_index(drop=True)

    if frame.empty:
        raise EmptyCohort(f"{path.name}: no usable rows", {"role": role.value})

    x = np.column_stack([_parse_real(frame[c], c) for c in schema.x_columns])
    y = d = weight = None
    if role == CohortRole.VALIDATION:
        y = _parse_real(frame[schema.y_column], schema.y_column)
    if role in (CohortRole.VALIDATION, CohortRole.RWD):
        d = _parse_binary(frame[schema.d_column], schema.d_column)
        if d.min() == d.max():
            raise DegenerateResponse(
                f"{path.name}: response column {schema.d_column!r} is constant ({d[0]})",
                {"role": role.value, "value": int(d[0])},
            )
    if schema.weight_column:
        weight = _parse_real(frame[schema.weight_column], schema.weight_column)
        if np.any(weight <= 0):
            row = int(np.flatnonzero(weight <= 0)[0])
            raise BadValue(
                f"{path.name}: design weight must be positive at row {row}",
                {"column": schema.weight_column, "row": row},
            )

    cohort = Cohort(
        x=x,
        y=y,
        d=d,
        design_weight=weight,
        role=role,
        column_names=list(schema.x_columns),
    )
    logger.debug(f"Loaded {role.value} cohort from {path}: n={cohort.n}, p={cohort.p}")
    return cohort


def check_compatibility(a: Cohort, b: Cohort) -> None:
    """Succeed iff both cohorts carry the same covariate names in the same order."""
    if list(a.column_names) == list(b.column_names):
        return
    divergent = sorted(
        set(a.column_names).symmetric_difference(b.column_names)
        | {
            name_a
            for name_a, name_b in zip(a.column_names, b.column_names)
            if name_a != name_b
        }
    )
    raise SchemaMismatch(
        f"covariate columns differ: {a.column_names} vs {b.column_names}",
        {"a": list(a.column_names), "b": list(b.column_names), "divergent": divergent},
    )


def cohort_to_frame(cohort: Cohort, schema: Optional[CohortSchema] = None) -> pd.DataFrame:
    schema = schema or CohortSchema(
        x_columns=list(cohort.column_names),
        weight_column="design_weight" if cohort.design_weight is not None else None,
    )
    frame = pd.DataFrame(cohort.x, columns=schema.x_columns)
    if cohort.y is not None and schema.y_column:
        frame[schema.y_column] = cohort.y
    if cohort.d is not None and schema.d_column:
        frame[schema.d_column] = cohort.d.astype(int)
    if cohort.design_weight is not None and schema.weight_column:
        frame[schema.weight_column] = cohort.design_weight
    return frame


def write_cohort(
    cohort: Cohort, path: Union[str, Path], schema: Optional[CohortSchema] = None
) -> Path:
    """Write a cohort as CSV using shortest round-trip float formatting."""
    path = Path(path)
    frame = cohort_to_frame(cohort, schema)
    for column in frame.columns:
        if frame[column].dtype.kind == "f":
            frame[column] = frame[column].map(lambda v: repr(float(v)))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8")
    return path

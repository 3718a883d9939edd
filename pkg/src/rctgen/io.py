"""CSV ingestion and export.

Conventions: header row required, missing entries written as the literal
token ``NA``, treatment/outcome live in columns named ``treatment`` and
``outcome``. A ``source`` column is rejected on input because the source is
derived from which file a row came from.
"""

from __future__ import annotations

import csv

import numpy as np

from .data import MaskedMatrix, StackedSample, TargetSample, TrialSample
from .errors import SchemaError

NA_TOKEN = "NA"
TREATMENT_COL = "treatment"
OUTCOME_COL = "outcome"
SOURCE_COL = "source"

# 17 significant digits round-trips any IEEE double.
FLOAT_FMT = "%.17g"


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required")
        rows = [row for row in reader if row]
    header = [h.strip() for h in header]
    if SOURCE_COL in header:
        raise SchemaError(
            f"{path}: a '{SOURCE_COL}' column is not allowed; "
            "source is derived from which file a row came from"
        )
    for row in rows:
        if len(row) != len(header):
            raise SchemaError(f"{path}: ragged row with {len(row)} fields")
    return header, rows


def _parse_column(path, name, cells) -> np.ndarray:
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        c = c.strip()
        if c == NA_TOKEN:
            out[i] = np.nan
        else:
            try:
                out[i] = float(c)
            except ValueError:
                raise SchemaError(f"{path}: column {name!r} has non-numeric cell {c!r}")
    return out


def load_trial_csv(path) -> TrialSample:
    header, rows = _read_table(path)
    if TREATMENT_COL not in header or OUTCOME_COL not in header:
        raise SchemaError(f"{path}: trial file needs '{TREATMENT_COL}' and '{OUTCOME_COL}' columns")
    cols = {name: _parse_column(path, name, [r[j] for r in rows]) for j, name in enumerate(header)}
    treatment = cols.pop(TREATMENT_COL)
    outcome = cols.pop(OUTCOME_COL)
    if np.isnan(treatment).any() or np.isnan(outcome).any():
        raise SchemaError(f"{path}: treatment and outcome must be fully observed")
    if not np.isin(treatment, (0.0, 1.0)).all():
        raise SchemaError(f"{path}: treatment values must be in {{0,1}}")
    names = tuple(n for n in header if n not in (TREATMENT_COL, OUTCOME_COL))
    values = np.column_stack([cols[n] for n in names])
    return TrialSample(MaskedMatrix.from_values(values, names), treatment.astype(int), outcome)


def load_target_csv(path, expect_columns: tuple[str, ...] | None = None) -> TargetSample:
    header, rows = _read_table(path)
    for forbidden in (TREATMENT_COL, OUTCOME_COL):
        if forbidden in header:
            raise SchemaError(f"{path}: target file must not carry a '{forbidden}' column")
    if expect_columns is not None and tuple(header) != tuple(expect_columns):
        raise SchemaError(
            f"{path}: columns {tuple(header)} do not match trial covariates {tuple(expect_columns)}"
        )
    values = np.column_stack(
        [_parse_column(path, name, [r[j] for r in rows]) for j, name in enumerate(header)]
    ) if rows else np.empty((0, len(header)))
    return TargetSample(MaskedMatrix.from_values(values, tuple(header)))


def _fmt(x: float) -> str:
    return NA_TOKEN if not np.isfinite(x) else FLOAT_FMT % x


def dump_trial_csv(path, trial: TrialSample) -> None:
    names = list(trial.covariates.column_names) + [TREATMENT_COL, OUTCOME_COL]
    x = trial.covariates.to_nan()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names)
        for i in range(trial.n):
            w.writerow(
                [_fmt(v) for v in x[i]]
                + [str(int(trial.treatment[i])), FLOAT_FMT % trial.outcome[i]]
            )


def dump_target_csv(path, target: TargetSample) -> None:
    x = target.covariates.to_nan()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(target.covariates.column_names)
        for i in range(target.m):
            w.writerow([_fmt(v) for v in x[i]])


def dump_stacked_csv(trial_path, target_path, s: StackedSample) -> None:
    dump_trial_csv(trial_path, s.trial())
    dump_target_csv(target_path, s.target())

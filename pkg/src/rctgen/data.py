"""Core data containers: masked covariate matrices, samples and reports.

Masked entries physically store a quiet sentinel (whatever the caller left
there), but the boolean mask is authoritative: no consumer in this package
may read a value whose mask entry is False. The scramble-fuzz tests enforce
this by overwriting masked entries with garbage and asserting bit-identical
downstream results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DegenerateSampleError, SchemaError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MaskedMatrix:
    """A real matrix together with a response mask (True = observed)."""

    values: np.ndarray
    mask: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        values = _frozen(np.asarray(self.values, dtype=float))
        mask = _frozen(np.asarray(self.mask, dtype=bool))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        if values.ndim != 2 or mask.shape != values.shape:
            raise SchemaError(
                f"values {values.shape} and mask {mask.shape} must be equal 2-d shapes"
            )
        if len(self.column_names) != values.shape[1]:
            raise SchemaError(
                f"{len(self.column_names)} column names for {values.shape[1]} columns"
            )
        if not np.all(np.isfinite(values[mask])):
            raise SchemaError("observed entries must be finite")

    @classmethod
    def from_values(cls, values, column_names=None) -> "MaskedMatrix":
        """Build from an array where NaN marks missing entries."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise SchemaError("expected a 2-d array")
        if column_names is None:
            column_names = tuple(f"X{j + 1}" for j in range(values.shape[1]))
        mask = np.isfinite(values)
        filled = np.where(mask, values, 0.0)
        return cls(filled, mask, tuple(column_names))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    def complete_rows(self) -> np.ndarray:
        """Boolean vector of rows with no missing entry."""
        return self.mask.all(axis=1)

    def to_nan(self) -> np.ndarray:
        """Copy of the values with masked entries set to NaN."""
        out = self.values.copy()
        out[~self.mask] = np.nan
        return out

    def take(self, rows) -> "MaskedMatrix":
        return MaskedMatrix(self.values[rows], self.mask[rows], self.column_names)


@dataclass(frozen=True)
class TrialSample:
    """RCT rows: covariates plus fully observed treatment and outcome."""

    covariates: MaskedMatrix
    treatment: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        treatment = _frozen(np.asarray(self.treatment, dtype=int))
        outcome = _frozen(np.asarray(self.outcome, dtype=float))
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "outcome", outcome)
        n = self.covariates.n_rows
        if treatment.shape != (n,) or outcome.shape != (n,):
            raise SchemaError("treatment/outcome must be vectors of length n")
        if not np.isin(treatment, (0, 1)).all():
            raise SchemaError("treatment must be binary")
        if not np.all(np.isfinite(outcome)):
            raise SchemaError("outcome must be fully observed and finite")

    @property
    def n(self) -> int:
        return self.covariates.n_rows

    def take(self, rows) -> "TrialSample":
        return TrialSample(
            self.covariates.take(rows), self.treatment[rows], self.outcome[rows]
        )

    def require_both_arms(self) -> None:
        n1 = int(self.treatment.sum())
        if n1 == 0 or n1 == self.n:
            raise DegenerateSampleError(
                f"trial needs both arms non-empty (treated={n1}, n={self.n})"
            )


@dataclass(frozen=True)
class TargetSample:
    """Observational rows: covariates only."""

    covariates: MaskedMatrix

    @property
    def m(self) -> int:
        return self.covariates.n_rows

    def take(self, rows) -> "TargetSample":
        return TargetSample(self.covariates.take(rows))


@dataclass(frozen=True)
class StackedSample:
    """Trial rows stacked on top of target rows with a source indicator."""

    covariates: MaskedMatrix
    source: np.ndarray  # 1 = trial row, 0 = target row; trial rows first
    treatment: np.ndarray  # length n_trial
    outcome: np.ndarray  # length n_trial

    def __post_init__(self):
        source = _frozen(np.asarray(self.source, dtype=int))
        object.__setattr__(self, "source", source)
        n_total = self.covariates.n_rows
        if source.shape != (n_total,):
            raise SchemaError("source must be a vector of length n+m")
        n = int(source.sum())
        if not (source[:n] == 1).all() or not (source[n:] == 0).all():
            raise SchemaError("trial rows must precede target rows")
        treatment = np.asarray(self.treatment, dtype=int)
        outcome = np.asarray(self.outcome, dtype=float)
        if treatment.shape != (n,) or outcome.shape != (n,):
            raise SchemaError("treatment/outcome must cover exactly the trial rows")
        object.__setattr__(self, "treatment", _frozen(treatment))
        object.__setattr__(self, "outcome", _frozen(outcome))

    @property
    def n_trial(self) -> int:
        return int(self.source.sum())

    @property
    def n_target(self) -> int:
        return self.covariates.n_rows - self.n_trial

    def trial(self) -> TrialSample:
        n = self.n_trial
        return TrialSample(self.covariates.take(slice(0, n)), self.treatment, self.outcome)

    def target(self) -> TargetSample:
        return TargetSample(self.covariates.take(slice(self.n_trial, None)))


def stack(trial: TrialSample, target: TargetSample) -> StackedSample:
    """Concatenate a trial and a target sample, trial rows first."""
    if trial.covariates.column_names != target.covariates.column_names:
        raise SchemaError(
            "column names differ: "
            f"{trial.covariates.column_names} vs {target.covariates.column_names}"
        )
    values = np.vstack([trial.covariates.values, target.covariates.values])
    mask = np.vstack([trial.covariates.mask, target.covariates.mask])
    source = np.concatenate(
        [np.ones(trial.n, dtype=int), np.zeros(target.m, dtype=int)]
    )
    covariates = MaskedMatrix(values, mask, trial.covariates.column_names)
    return StackedSample(covariates, source, trial.treatment, trial.outcome)


def complete_cases(s: StackedSample) -> StackedSample:
    """Keep only rows whose covariates are fully observed."""
    keep = s.covariates.complete_rows()
    n = s.n_trial
    keep_trial = keep[:n]
    trial = s.trial().take(keep_trial)
    if trial.n == 0 or not (0 < trial.treatment.sum() < trial.n):
        raise DegenerateSampleError(
            "complete-case filtering left an empty trial arm "
            f"(kept {trial.n} of {n} trial rows)"
        )
    target = s.target().take(keep[n:])
    return stack(trial, target)


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate of the target-population ATE plus metadata."""

    estimate: float
    method: str
    missing_handler: str
    n_trial: int
    n_target: int
    variance: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    converged: bool = True
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.variance is not None:
            if self.variance < 0:
                raise SchemaError("variance must be nonnegative")
            if self.ci_low is None or self.ci_high is None:
                raise SchemaError("variance present implies a CI is present")
        if self.ci_low is not None and self.ci_high is not None:
            if not (self.ci_low <= self.estimate <= self.ci_high):
                raise SchemaError("CI must bracket the point estimate")

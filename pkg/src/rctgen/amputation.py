"""Deliberate introduction of missing values into complete matrices.

Three mechanisms are supported:

* MCAR: each targeted entry is masked independently with the requested
  probability.
* MAR: per masked column, the masking probability follows a logistic model
  in a set of driver columns; the intercept is calibrated by bisection so
  the expected proportion of masked entries equals the request. By default
  the first half of the columns receives missing values and the second
  half stays fully observed and acts as the drivers — missingness that
  depends on values which can themselves be missing would not be missing
  at random.
* MNAR: self-masking upper-quantile censorship; entries at or above the
  column's (1 - 2*proportion)-quantile are masked independently with
  probability 0.5, so the expected masked proportion equals the request.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import MaskedMatrix
from .errors import SpecError, UnsupportedProportionError

MECHANISMS = ("MCAR", "MAR", "MNAR")


@dataclass(frozen=True)
class AmputationSpec:
    """How to generate missing values in a complete matrix."""

    mechanism: str = "MCAR"
    proportion: float = 0.2
    columns: tuple[int, ...] | None = None  # None = all columns
    mar_driver_columns: tuple[int, ...] | None = None  # None = all other columns
    mar_slopes: tuple[float, ...] | None = None  # None = all ones
    seed: int | None = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise SpecError(f"unknown mechanism {self.mechanism!r}, expected one of {MECHANISMS}")
        if not 0.0 <= self.proportion < 1.0:
            raise SpecError(f"proportion must be in [0, 1), got {self.proportion}")
        if self.mechanism == "MNAR" and self.proportion >= 0.5:
            raise UnsupportedProportionError(
                "MNAR quantile censorship supports proportions below 0.5, "
                f"got {self.proportion}"
            )

    def target_columns(self, p: int) -> tuple[int, ...]:
        cols = tuple(range(p)) if self.columns is None else tuple(self.columns)
        if any(j < 0 or j >= p for j in cols):
            raise SpecError(f"column index out of range for p={p}: {cols}")
        return cols

    def driver_columns(self, j: int, p: int) -> tuple[int, ...]:
        if self.mar_driver_columns is None:
            drivers = tuple(k for k in range(p) if k != j)
        else:
            drivers = tuple(k for k in self.mar_driver_columns if k != j)
        if not drivers:
            raise SpecError(
                f"MAR needs at least one driver column disjoint from column {j}"
            )
        return drivers


def _calibrate_intercept(lin: np.ndarray, proportion: float, tol: float = 1e-3) -> float:
    """Bisect the logistic intercept so mean(expit(a + lin)) == proportion."""
    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        mean_p = float(expit(mid + lin).mean())
        if abs(mean_p - proportion) < tol:
            return mid
        if mean_p < proportion:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ampute(x: np.ndarray, spec: AmputationSpec, rng: np.random.Generator | None = None,
           column_names=None) -> MaskedMatrix:
    """Mask entries of a complete matrix according to the spec."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise SpecError("ampute expects a complete matrix with no pre-existing NA")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n, p = x.shape
    cols = spec.target_columns(p)
    mask = np.ones((n, p), dtype=bool)

    if spec.proportion == 0.0 or n == 0:
        return MaskedMatrix(x, mask, column_names or tuple(f"X{j + 1}" for j in range(p)))

    if spec.mechanism == "MCAR":
        for j in cols:
            mask[:, j] = rng.random(n) >= spec.proportion
    elif spec.mechanism == "MAR":
        default_drivers = None
        if spec.columns is None and spec.mar_driver_columns is None:
            if p < 2:
                raise SpecError("MAR needs at least two columns")
            # Deterministic split so separately amputed matrices (e.g. a
            # trial and its target sample) share the same response patterns.
            cols = tuple(range(p // 2))
            default_drivers = tuple(range(p // 2, p))
        for j in cols:
            drivers = default_drivers or spec.driver_columns(j, p)
            slopes = (
                np.ones(len(drivers))
                if spec.mar_slopes is None
                else np.asarray(spec.mar_slopes, dtype=float)
            )
            if slopes.shape != (len(drivers),):
                raise SpecError(
                    f"{len(slopes)} MAR slopes for {len(drivers)} driver columns"
                )
            lin = x[:, drivers] @ slopes
            intercept = _calibrate_intercept(lin, spec.proportion)
            mask[:, j] = rng.random(n) >= expit(intercept + lin)
    else:  # MNAR: upper-quantile self-masking
        q = 1.0 - 2.0 * spec.proportion
        for j in cols:
            cutoff = np.quantile(x[:, j], q)
            censored = x[:, j] >= cutoff
            mask[censored, j] = rng.random(int(censored.sum())) >= 0.5

    return MaskedMatrix(x, mask, column_names or tuple(f"X{j + 1}" for j in range(p)))

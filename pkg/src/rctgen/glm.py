"""Complete-data generalized linear models used as nuisance fits.

Linear fits use least squares; logistic fits use unpenalized Newton/IRLS
with a hard stop on exploding coefficients as a perfect-separation guard.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import SchemaError, SpecError

FAMILIES = ("linear", "logistic")

LOGISTIC_TOL = 1e-8
LOGISTIC_MAX_ITER = 100
COEF_CLIP = 30.0


@dataclass(frozen=True)
class GlmModel:
    family: str
    coefficients: np.ndarray  # intercept first
    n_iter: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    separation: bool = False

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.coefficients[0] + x @ self.coefficients[1:]

    def predict(self, x: np.ndarray) -> np.ndarray:
        eta = self.linear_predictor(x)
        return expit(eta) if self.family == "logistic" else eta


def _check_rank(x1: np.ndarray, names) -> None:
    """Raise naming the first column that is collinear with its predecessors."""
    if np.linalg.matrix_rank(x1) == x1.shape[1]:
        return
    for j in range(1, x1.shape[1] + 1):
        if np.linalg.matrix_rank(x1[:, :j]) < j:
            label = "intercept" if j == 1 else (
                names[j - 2] if names is not None else f"column {j - 2}"
            )
            raise SchemaError(f"design matrix is rank deficient at {label}")


def fit_glm(
    x: np.ndarray,
    y: np.ndarray,
    family: str,
    weights: np.ndarray | None = None,
    column_names=None,
) -> GlmModel:
    """Fit an intercept-plus-slopes GLM on complete data."""
    if family not in FAMILIES:
        raise SpecError(f"unknown family {family!r}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(x)):
        raise SchemaError("fit_glm requires complete covariates")
    n, p = x.shape
    if y.shape != (n,):
        raise SchemaError("y must be a vector matching x rows")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    x1 = np.column_stack([np.ones(n), x])
    _check_rank(x1, column_names)

    if family == "linear":
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(x1 * sw[:, None], y * sw, rcond=None)
        return GlmModel("linear", coef)

    if not np.isin(y[w > 0], (0.0, 1.0)).all():
        raise SchemaError("logistic fit requires binary y")
    beta = np.zeros(p + 1)
    grad_norm = np.inf
    for it in range(1, LOGISTIC_MAX_ITER + 1):
        eta = x1 @ beta
        mu = expit(eta)
        grad = x1.T @ (w * (y - mu))
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < LOGISTIC_TOL:
            return GlmModel("logistic", beta, it, grad_norm, True)
        s = w * mu * (1.0 - mu)
        hess = x1.T @ (x1 * s[:, None])
        try:
            step = np.linalg.solve(hess + 1e-12 * np.eye(p + 1), grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.max(np.abs(beta)) > COEF_CLIP:
            # Perfect or quasi-separation: clip and flag instead of diverging.
            beta = np.clip(beta, -COEF_CLIP, COEF_CLIP)
            return GlmModel("logistic", beta, it, grad_norm, False, separation=True)
    return GlmModel("logistic", beta, LOGISTIC_MAX_ITER, grad_norm, False)

"""Synthetic trial/target generation.

Two regimes are supported. Under the standard regime a large covariate pool
is drawn, trial membership is sampled from a logistic selection model on the
complete covariates, outcomes are generated, and missing values are
introduced afterwards. Under the pattern-dependent (CIS) regime the pool is
amputed first and the selection model reads the observed values and the
response pattern, with masked terms dropping out of the linear predictor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .amputation import AmputationSpec, ampute
from .data import MaskedMatrix, TargetSample, TrialSample
from .errors import PoolExhaustedError, SpecError

SELECTION_MODELS = ("StdLinear", "StdNonlinear", "CisLinear", "CisNonlinear")
OUTCOME_MODELS = ("Linear", "Nonlinear")
ASSUMPTIONS = ("Standard", "CIS")

ATE_LINEAR = 27.4

# The non-linear treatment term is 27.4 * (|X1| sin(X1) + 1.5) with
# X1 ~ N(1, 1); its expectation, computed by adaptive quadrature of
# |z| sin(z) phi(z; 1, 1), gives the population ATE below.
E_ABS_SIN = 0.7257169562778817
ATE_NONLINEAR = ATE_LINEAR * (E_ABS_SIN + 1.5)


def covariate_mean_proxy(x: np.ndarray, j: int) -> float:
    """Reading of the per-coordinate scaling factor in the non-linear terms.

    Interpreted as the population mean of coordinate j, which is 1 under the
    default covariate distribution. Isolated here so the reading can be
    swapped without touching the model formulas.
    """
    return 1.0


@dataclass(frozen=True)
class SimulationConfig:
    """One data-generating scenario."""

    n_trial: int = 1000  # expected trial size; pool size is derived from it
    m: int = 10000
    covariate_dim: int = 4
    covariate_mean: float = 1.0
    covariate_correlation: float = 0.6
    selection_model: str = "StdLinear"
    outcome_model: str = "Linear"
    assumption: str = "Standard"
    trial_amputation: AmputationSpec | None = None
    target_amputation: AmputationSpec | None = None
    pool_size: int | None = None  # None = calibrated so E[trial size] = n_trial
    seed: int | None = None

    def __post_init__(self):
        if self.selection_model not in SELECTION_MODELS:
            raise SpecError(f"unknown selection model {self.selection_model!r}")
        if self.outcome_model not in OUTCOME_MODELS:
            raise SpecError(f"unknown outcome model {self.outcome_model!r}")
        if self.assumption not in ASSUMPTIONS:
            raise SpecError(f"unknown assumption {self.assumption!r}")
        is_cis_model = self.selection_model.startswith("Cis")
        if (self.assumption == "CIS") != is_cis_model:
            raise SpecError(
                f"assumption {self.assumption!r} requires a matching selection model, "
                f"got {self.selection_model!r}"
            )
        if self.n_trial < 1 or self.m < 1:
            raise SpecError("n_trial and m must be positive")

    def covariance(self) -> np.ndarray:
        p, rho = self.covariate_dim, self.covariate_correlation
        sigma = np.full((p, p), rho)
        np.fill_diagonal(sigma, 1.0)
        return sigma

    def ground_truth(self) -> float:
        return ATE_LINEAR if self.outcome_model == "Linear" else ATE_NONLINEAR


def draw_covariates(n: int, cfg: SimulationConfig, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. rows from N(mean, Sigma) with equicorrelated Sigma."""
    if n < 1:
        raise SpecError("n must be >= 1")
    mean = np.full(cfg.covariate_dim, cfg.covariate_mean)
    return rng.multivariate_normal(mean, cfg.covariance(), size=n, method="cholesky")


def _nl(x1: np.ndarray) -> np.ndarray:
    return np.abs(x1) * np.sin(x1)


def selection_logits(x: np.ndarray, mask: np.ndarray | None, model: str) -> np.ndarray:
    """Linear predictor of the trial-selection model, vectorized over rows."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 4:
        raise SpecError("selection models are defined for 4 covariates")
    if model.startswith("Std"):
        if mask is not None and not np.all(mask):
            raise SpecError("standard selection models require fully observed rows")
        r = np.ones_like(x)
        xv = x
    else:
        if mask is None:
            r = np.ones_like(x)
        else:
            r = np.atleast_2d(np.asarray(mask, dtype=float))
        # Masked terms vanish: evaluate on zeroed entries so stored sentinel
        # values are never read.
        xv = x * r

    c2 = covariate_mean_proxy(xv, 1)
    c4 = covariate_mean_proxy(xv, 3)
    if model == "StdLinear":
        return -3.1 - 0.5 * xv[:, 0] - 0.3 * xv[:, 1] - 0.5 * xv[:, 2] - 0.4 * xv[:, 3]
    if model == "StdNonlinear":
        s1 = _nl(xv[:, 0])
        return (
            -2.95
            - 0.5 * s1
            - 0.3 * np.abs(xv[:, 1]) * c2
            - 0.75 * xv[:, 2]
            - 0.5 * xv[:, 2] * s1
            - 0.4 * np.abs(xv[:, 3]) * c4
        )
    if model == "CisLinear":
        return (
            -2.5
            - 0.5 * xv[:, 0] * r[:, 0]
            - 0.3 * xv[:, 1] * r[:, 1]
            - 0.5 * xv[:, 2] * r[:, 2]
            - 0.4 * xv[:, 3] * r[:, 3]
        )
    if model == "CisNonlinear":
        s1 = _nl(xv[:, 0])
        return (
            -2.1
            - 0.5 * (s1 + 1.5) * r[:, 0]
            - 0.3 * np.abs(xv[:, 1]) * c2 * r[:, 1]
            - 0.75 * xv[:, 2] * r[:, 2]
            - 0.5 * xv[:, 2] * s1 * r[:, 2]
            - 0.4 * np.abs(xv[:, 3]) * c4 * r[:, 3]
        )
    raise SpecError(f"unknown selection model {model!r}")


def selection_probability(row, mask, model: str) -> float:
    """Selection probability for a single (possibly masked) covariate row."""
    row = np.atleast_2d(np.asarray(row, dtype=float))
    mask = None if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    return float(expit(selection_logits(row, mask, model))[0])


def outcome_means(x: np.ndarray, a, model: str) -> np.ndarray:
    """Noise-free outcome surface on complete covariate rows."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), x.shape[:1])
    if x.shape[1] != 4:
        raise SpecError("outcome models are defined for 4 covariates")
    if model == "Linear":
        return -100.0 + 27.4 * a * x[:, 0] + 13.7 * (x[:, 1] + x[:, 2] + x[:, 3])
    if model == "Nonlinear":
        s1 = _nl(x[:, 0])
        c2 = covariate_mean_proxy(x, 1)
        c4 = covariate_mean_proxy(x, 3)
        return (
            -100.0
            + 27.4 * a * (s1 + 1.5)
            + 13.7 * np.abs(x[:, 1]) * c2
            + 20.55 * x[:, 2]
            + 13.7 * x[:, 2] * s1
            + 13.7 * np.abs(x[:, 3]) * c4
        )
    raise SpecError(f"unknown outcome model {model!r}")


def draw_outcome(row, a, model: str, rng: np.random.Generator) -> float:
    """One noisy outcome for a single complete covariate row."""
    mean = outcome_means(np.atleast_2d(row), a, model)[0]
    return float(mean + rng.standard_normal())


_PILOT_SIZE = 20000


def _calibrated_pool_size(cfg: SimulationConfig, rng: np.random.Generator) -> int:
    """Monte-Carlo pilot for the pool size that makes E[trial size] = n_trial."""
    x = draw_covariates(_PILOT_SIZE, cfg, rng)
    if cfg.assumption == "CIS":
        spec = cfg.trial_amputation or AmputationSpec(proportion=0.0)
        mm = ampute(x, spec, rng)
        probs = expit(selection_logits(mm.values, mm.mask, cfg.selection_model))
    else:
        probs = expit(selection_logits(x, None, cfg.selection_model))
    mean_p = float(probs.mean())
    if mean_p <= 0:
        raise PoolExhaustedError("pilot selection probability is zero")
    return max(cfg.n_trial, math.ceil(cfg.n_trial / mean_p))


def simulate(
    cfg: SimulationConfig, rng: np.random.Generator | None = None
) -> tuple[TrialSample, TargetSample, float]:
    """Generate one (trial, target) pair plus the true target-population ATE."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    pool_size = cfg.pool_size or _calibrated_pool_size(cfg, rng)
    names = tuple(f"X{j + 1}" for j in range(cfg.covariate_dim))

    x_pool = draw_covariates(pool_size, cfg, rng)
    if cfg.assumption == "CIS":
        spec = cfg.trial_amputation or AmputationSpec(proportion=0.0)
        pool_mm = ampute(x_pool, spec, rng, column_names=names)
        probs = expit(selection_logits(pool_mm.values, pool_mm.mask, cfg.selection_model))
        selected = rng.random(pool_size) < probs
        if not selected.any():
            raise PoolExhaustedError(
                "no pool row was selected into the trial; increase the pool size"
            )
        trial_x = x_pool[selected]
        trial_mask = pool_mm.mask[selected]
    else:
        probs = expit(selection_logits(x_pool, None, cfg.selection_model))
        selected = rng.random(pool_size) < probs
        if not selected.any():
            raise PoolExhaustedError(
                "no pool row was selected into the trial; increase the pool size"
            )
        trial_x = x_pool[selected]
        trial_mask = None  # amputed below, after outcomes

    n = trial_x.shape[0]
    treatment = (rng.random(n) < 0.5).astype(int)
    # Outcomes always derive from the complete underlying covariates;
    # amputation only hides values, it never alters A or Y.
    outcome = outcome_means(trial_x, treatment, cfg.outcome_model) + rng.standard_normal(n)

    target_x = draw_covariates(cfg.m, cfg, rng)
    target_spec = cfg.target_amputation or cfg.trial_amputation or AmputationSpec(proportion=0.0)
    target_mm = ampute(target_x, target_spec, rng, column_names=names)

    if cfg.assumption == "CIS":
        trial_mm = MaskedMatrix(trial_x, trial_mask, names)
    else:
        trial_spec = cfg.trial_amputation or AmputationSpec(proportion=0.0)
        trial_mm = ampute(trial_x, trial_spec, rng, column_names=names)

    trial = TrialSample(trial_mm, treatment, outcome)
    target = TargetSample(target_mm)
    return trial, target, cfg.ground_truth()

"""Chained-equations multiple imputation and Rubin pooling.

Three source-structure strategies are provided for stacked trial/target
data:

* WI: impute the trial covariates using (X, A, Y) jointly and the target
  covariates using X only, then form all M x M cross-combinations.
* AH: impute the concatenated covariates, ignoring the source indicator.
* FE: impute the concatenated covariates with the source indicator as a
  fixed-effect predictor (the indicator itself is never imputed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit

from .data import MaskedMatrix, StackedSample, TargetSample, TrialSample, stack
from .errors import SchemaError, SpecError
from .glm import fit_glm

STRATEGIES = ("WI", "AH", "FE")
DEFAULT_M = 10
DEFAULT_CHAIN_ITERS = 10


@dataclass(frozen=True)
class ImputationSet:
    completed: tuple[np.ndarray, ...]  # M complete matrices
    m_imputations: int
    chain_iters: int
    strategy: str | None = None


@dataclass(frozen=True)
class PooledEstimate:
    estimate: float
    within_var: float | None
    between_var: float | None
    total_var: float | None
    m_imputations: int
    ci_low: float | None = None
    ci_high: float | None = None
    df: float | None = None


def _bayes_linear_draw(x1, yy, rng):
    """Posterior draw of (beta, sigma) under the noninformative prior."""
    n, q = x1.shape
    xtx = x1.T @ x1 + 1e-8 * np.eye(q)
    xty = x1.T @ yy
    chol = np.linalg.cholesky(xtx)
    beta_hat = np.linalg.solve(xtx, xty)
    resid = yy - x1 @ beta_hat
    dof = max(n - q, 1)
    sigma2 = resid @ resid / rng.chisquare(dof)
    z = rng.standard_normal(q)
    beta = beta_hat + np.sqrt(sigma2) * np.linalg.solve(chol.T, z)
    return beta, np.sqrt(sigma2)


def _logistic_draw(x1, yy, rng):
    """Approximate posterior draw of logistic coefficients."""
    model = fit_glm(x1[:, 1:], yy, "logistic")
    beta_hat = model.coefficients
    mu = expit(x1 @ beta_hat)
    s = np.maximum(mu * (1 - mu), 1e-6)
    cov = np.linalg.inv(x1.T @ (x1 * s[:, None]) + 1e-8 * np.eye(x1.shape[1]))
    chol = np.linalg.cholesky(0.5 * (cov + cov.T))
    return beta_hat + chol @ rng.standard_normal(len(beta_hat))


def _is_binary(col_obs: np.ndarray) -> bool:
    return bool(np.isin(col_obs, (0.0, 1.0)).all())


PMM_DONORS = 5


def _pmm_match(yhat_obs, y_obs, yhat_mis, rng):
    """Predictive mean matching: donate observed values whose fitted means
    are closest to the posterior-draw predictions for the missing rows."""
    n = len(yhat_obs)
    order = np.argsort(yhat_obs)
    sorted_hat = yhat_obs[order]
    sorted_y = y_obs[order]
    pos = np.searchsorted(sorted_hat, yhat_mis)
    k = min(PMM_DONORS, n)
    # Candidate window of 2k sorted neighbours around each insertion point.
    offsets = np.arange(-k, k)
    idx = np.clip(pos[:, None] + offsets[None, :], 0, n - 1)
    dist = np.abs(sorted_hat[idx] - yhat_mis[:, None])
    nearest = np.argpartition(dist, k - 1, axis=1)[:, :k]
    pick = rng.integers(0, k, size=len(yhat_mis))
    donor = np.take_along_axis(idx, np.take_along_axis(nearest, pick[:, None], axis=1), axis=1)
    return sorted_y[donor[:, 0]]


def _single_chain(values, mask, predictors, interactions, donor_groups, iters, rng):
    """One chained-equations pass; returns a completed covariate matrix."""
    n, p = values.shape
    work = values.copy()
    incomplete_cols = [j for j in range(p) if not mask[:, j].all()]
    # Initialize missing entries with random draws from the observed margin.
    for j in incomplete_cols:
        obs = mask[:, j]
        work[~obs, j] = rng.choice(work[obs, j], size=int((~obs).sum()), replace=True)
    binary = {j: _is_binary(values[mask[:, j], j]) for j in incomplete_cols}

    # Preallocate the design buffer: intercept, X_{-j}, fixed predictors,
    # then one gated copy of X_{-j} per interaction vector.
    n_pred = 0 if predictors is None else predictors.shape[1]
    q = 1 + (p - 1) * (1 + len(interactions)) + n_pred
    x1 = np.empty((n, q))
    x1[:, 0] = 1.0
    if predictors is not None:
        x1[:, p : p + n_pred] = predictors
    group_ids = None if donor_groups is None else np.unique(donor_groups)

    for _ in range(iters):
        for j in incomplete_cols:
            obs = mask[:, j]
            mis = ~obs
            others = [k for k in range(p) if k != j]
            x1[:, 1:p] = work[:, others]
            col = p + n_pred
            for g in interactions:
                x1[:, col : col + p - 1] = work[:, others] * g[:, None]
                col += p - 1
            if binary[j]:
                beta = _logistic_draw(x1[obs], work[obs, j], rng)
                probs = expit(x1[mis] @ beta)
                work[mis, j] = (rng.random(int(mis.sum())) < probs).astype(float)
                continue
            yy = work[obs, j]
            xtx = x1[obs].T @ x1[obs] + 1e-8 * np.eye(q)
            beta_hat = np.linalg.solve(xtx, x1[obs].T @ yy)
            beta, _ = _bayes_linear_draw(x1[obs], yy, rng)
            yhat = np.empty(n)
            yhat[obs] = x1[obs] @ beta_hat
            yhat[mis] = x1[mis] @ beta
            if group_ids is None:
                work[mis, j] = _pmm_match(yhat[obs], yy, yhat[mis], rng)
                continue
            # Match donors within the row's group so the donated residual
            # scale is the group's own (e.g. treated trial rows are not
            # filled with target-sized residuals).
            for g in group_ids:
                mis_g = mis & (donor_groups == g)
                if not mis_g.any():
                    continue
                obs_g = obs & (donor_groups == g)
                pool = obs_g if obs_g.sum() >= 2 * PMM_DONORS else obs
                work[mis_g, j] = _pmm_match(yhat[pool], work[pool, j], yhat[mis_g], rng)
    return work


def mice_impute(
    mm: MaskedMatrix,
    m_imputations: int = DEFAULT_M,
    chain_iters: int = DEFAULT_CHAIN_ITERS,
    rng: np.random.Generator | None = None,
    predictors: np.ndarray | None = None,
    interactions: tuple[np.ndarray, ...] = (),
    donor_groups: np.ndarray | None = None,
) -> ImputationSet:
    """M independent chained-equations completions of a masked matrix.

    ``predictors`` is an optional complete matrix of extra columns used in
    every conditional model but never imputed (e.g. treatment, outcome, or
    the source indicator).  ``interactions`` is a tuple of complete gate
    vectors g; each conditional model additionally includes the columns
    g * X_{-j}, letting slopes differ across the groups g encodes.
    ``donor_groups`` restricts predictive-mean-matching donors to rows in
    the recipient's group (with a fallback to the full pool when a group
    has too few observed values).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if m_imputations < 1:
        raise SpecError("need at least one imputation")
    p = mm.n_cols
    min_obs = p + 2
    counts = mm.mask.sum(axis=0)
    if (counts < min_obs).any():
        bad = mm.column_names[int(np.argmin(counts))]
        raise SchemaError(
            f"column {bad!r} has {int(counts.min())} observed values; need >= {min_obs}"
        )
    if predictors is not None:
        predictors = np.asarray(predictors, dtype=float)
        if predictors.shape[0] != mm.n_rows or not np.all(np.isfinite(predictors)):
            raise SchemaError("predictors must be complete and row-aligned")
    interactions = tuple(np.asarray(g, dtype=float) for g in interactions)
    for g in interactions:
        if g.shape != (mm.n_rows,) or not np.all(np.isfinite(g)):
            raise SchemaError("interaction gates must be complete row-aligned vectors")
    if donor_groups is not None:
        donor_groups = np.asarray(donor_groups)
        if donor_groups.shape != (mm.n_rows,):
            raise SchemaError("donor_groups must be one label per row")

    if mm.is_complete:
        completed = tuple(mm.values.copy() for _ in range(m_imputations))
        return ImputationSet(completed, m_imputations, chain_iters)

    base = np.where(mm.mask, mm.values, np.nan)
    completed = tuple(
        _single_chain(
            np.nan_to_num(base, nan=0.0), mm.mask, predictors, interactions,
            donor_groups, chain_iters, rng,
        )
        for _ in range(m_imputations)
    )
    return ImputationSet(completed, m_imputations, chain_iters)


def _as_stacked(s: StackedSample, completed_values: np.ndarray) -> StackedSample:
    names = s.covariates.column_names
    mm = MaskedMatrix(
        completed_values, np.ones_like(completed_values, dtype=bool), names
    )
    n = s.n_trial
    trial = TrialSample(mm.take(slice(0, n)), s.treatment, s.outcome)
    target = TargetSample(mm.take(slice(n, None)))
    return stack(trial, target)


def multi_impute(
    s: StackedSample,
    strategy: str,
    m_imputations: int = DEFAULT_M,
    chain_iters: int = DEFAULT_CHAIN_ITERS,
    rng: np.random.Generator | None = None,
) -> list[StackedSample]:
    """Completed stacked samples under one of the three source strategies."""
    if strategy not in STRATEGIES:
        raise SpecError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if rng is None:
        rng = np.random.default_rng(0)
    n = s.n_trial

    if strategy == "WI":
        trial_rng, target_rng = rng.spawn(2)
        trial_mm = s.covariates.take(slice(0, n))
        # The outcome relates to the covariates arm-specifically, so the
        # trial conditional models include (A, Y, A*Y) and arm-gated slopes.
        a = s.treatment.astype(float)
        trial_pred = np.column_stack([a, s.outcome, a * s.outcome])
        trial_sets = mice_impute(
            trial_mm,
            m_imputations,
            chain_iters,
            trial_rng,
            predictors=trial_pred,
            interactions=(a,),
            donor_groups=s.treatment,
        )
        target_mm = s.covariates.take(slice(n, None))
        target_sets = mice_impute(target_mm, m_imputations, chain_iters, target_rng)
        out = []
        for tv in trial_sets.completed:
            for ov in target_sets.completed:
                out.append(_as_stacked(s, np.vstack([tv, ov])))
        return out

    predictors = None
    interactions: tuple[np.ndarray, ...] = ()
    donor_groups = None
    if strategy == "FE":
        # Source fixed effect plus the trial's dependent variables: treatment
        # and outcome are zeroed on target rows, so target rows are imputed
        # from covariates alone while trial rows also condition on (A, Y).
        # Source- and arm-gated slopes keep the covariate-outcome association
        # from being attenuated toward the pooled fit.
        src = s.source.astype(float)
        a_col = np.zeros(len(src))
        y_col = np.zeros(len(src))
        a_col[:n] = s.treatment
        y_col[:n] = s.outcome
        predictors = np.column_stack([src, a_col, y_col, a_col * y_col])
        interactions = (src, a_col)
        donor_groups = (src + src * a_col).astype(np.int64)  # target / control / treated
    sets = mice_impute(
        s.covariates, m_imputations, chain_iters, rng,
        predictors=predictors, interactions=interactions, donor_groups=donor_groups,
    )
    return [_as_stacked(s, v) for v in sets.completed]


def rubin_pool(estimates, variances=None) -> PooledEstimate:
    """Combine per-imputation results: mean point estimate, W + (1+1/M)B."""
    estimates = np.asarray(estimates, dtype=float)
    m = len(estimates)
    if m == 0:
        raise SpecError("rubin_pool needs at least one estimate")
    point = float(estimates.mean())
    if variances is None:
        between = float(estimates.var(ddof=1)) if m > 1 else None
        return PooledEstimate(point, None, between, None, m)
    variances = np.asarray(variances, dtype=float)
    if variances.shape != estimates.shape or (variances < 0).any():
        raise SpecError("variances must be nonnegative and match estimates")
    within = float(variances.mean())
    if m == 1:
        total = within
        half = 1.959963984540054 * np.sqrt(total)
        return PooledEstimate(point, within, None, total, m, point - half, point + half, np.inf)
    between = float(estimates.var(ddof=1))
    total = within + (1.0 + 1.0 / m) * between
    if between > 0:
        df = (m - 1) * (1.0 + within / ((1.0 + 1.0 / m) * between)) ** 2
        tq = float(stats.t.ppf(0.975, df))
    else:
        df = np.inf
        tq = 1.959963984540054
    half = tq * np.sqrt(total)
    return PooledEstimate(point, within, between, total, m, point - half, point + half, df)

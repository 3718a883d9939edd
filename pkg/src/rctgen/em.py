"""Nuisance regressions on incomplete covariates via EM.

Three layers:

* ``fit_mvn_em``: maximum likelihood for a multivariate normal with
  ignorable missingness, grouping rows by response pattern.
* ``fit_em_glm``: linear fits come from the joint Gaussian of (X, y);
  logistic fits run a Monte-Carlo EM where each incomplete row is completed
  K times from the Gaussian conditional given its observed coordinates
  (draws frozen across iterations) and the M-step is a weighted IRLS with
  per-draw importance weights.
* ``predict_em``: prediction on new, possibly incomplete rows by
  conditional-mean completion (linear) or by averaging the link over the K
  Gaussian-conditional completions (logistic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import MaskedMatrix
from .errors import SchemaError, SpecError
from .glm import GlmModel, fit_glm

MVN_EM_TOL = 1e-8
MVN_EM_MAX_ITER = 500

MCEM_REL_TOL = 1e-4
MCEM_STABLE_ITERS = 3
MCEM_MAX_ITER = 100
DEFAULT_MC_DRAWS = 50


@dataclass(frozen=True)
class MvnModel:
    mean: np.ndarray
    covariance: np.ndarray
    loglik_trace: np.ndarray
    n_iter: int
    converged: bool

    def conditional(self, values: np.ndarray, mask: np.ndarray):
        """Mean and covariance of the missing block given the observed one."""
        obs = np.flatnonzero(mask)
        mis = np.flatnonzero(~mask)
        if mis.size == 0:
            return np.empty(0), np.empty((0, 0))
        if obs.size == 0:
            return self.mean.copy(), self.covariance.copy()
        s_oo = self.covariance[np.ix_(obs, obs)]
        s_mo = self.covariance[np.ix_(mis, obs)]
        s_mm = self.covariance[np.ix_(mis, mis)]
        solve = np.linalg.solve(s_oo, (values[obs] - self.mean[obs]))
        cond_mean = self.mean[mis] + s_mo @ solve
        cond_cov = s_mm - s_mo @ np.linalg.solve(s_oo, s_mo.T)
        return cond_mean, cond_cov

    def complete_by_conditional_mean(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        out = values.astype(float).copy()
        cond_mean, _ = self.conditional(values, mask)
        out[~mask] = cond_mean
        return out


def _pattern_groups(mask: np.ndarray):
    """Group row indices by identical response pattern."""
    n, p = mask.shape
    codes = mask @ (1 << np.arange(p))
    order = np.argsort(codes, kind="stable")
    groups = []
    start = 0
    sorted_codes = codes[order]
    for i in range(1, n + 1):
        if i == n or sorted_codes[i] != sorted_codes[start]:
            idx = order[start:i]
            groups.append((mask[idx[0]].copy(), idx))
            start = i
    return groups


def fit_mvn_em(
    mm: MaskedMatrix, tol: float = MVN_EM_TOL, max_iter: int = MVN_EM_MAX_ITER
) -> MvnModel:
    """EM for a multivariate normal with ignorable missingness (MLE, denominator n)."""
    x = mm.values
    mask = mm.mask
    n, p = x.shape
    obs_counts = mask.sum(axis=0)
    if (obs_counts < 2).any():
        bad = mm.column_names[int(np.argmin(obs_counts))]
        raise SchemaError(f"column {bad!r} observed fewer than twice")

    # Start from observed-margin moments.
    xz = np.where(mask, x, 0.0)
    mean = xz.sum(axis=0) / obs_counts
    centered = np.where(mask, x - mean, 0.0)
    cov = (centered.T @ centered) / np.maximum(1, (mask.astype(float).T @ mask.astype(float)))
    cov = 0.5 * (cov + cov.T)
    cov += np.eye(p) * max(1e-6, 1e-6 * np.trace(cov) / p)

    groups = _pattern_groups(mask)
    logliks = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        sum_x = np.zeros(p)
        sum_xx = np.zeros((p, p))
        loglik = 0.0
        for pattern, idx in groups:
            obs = np.flatnonzero(pattern)
            mis = np.flatnonzero(~pattern)
            xg = x[idx]
            k = len(idx)
            filled = xg.copy()
            add_cov = np.zeros((p, p))
            if mis.size:
                if obs.size:
                    s_oo = cov[np.ix_(obs, obs)]
                    s_mo = cov[np.ix_(mis, obs)]
                    sol = np.linalg.solve(s_oo, s_mo.T).T  # (mis, obs)
                    resid = xg[:, obs] - mean[obs]
                    filled[:, mis] = mean[mis] + resid @ sol.T
                    cond_cov = cov[np.ix_(mis, mis)] - sol @ cov[np.ix_(obs, mis)]
                else:
                    filled[:, mis] = mean[mis]
                    cond_cov = cov.copy()
                add_cov[np.ix_(mis, mis)] = k * cond_cov
            sum_x += filled.sum(axis=0)
            sum_xx += filled.T @ filled + add_cov
            if obs.size:
                s_oo = cov[np.ix_(obs, obs)]
                sign, logdet = np.linalg.slogdet(s_oo)
                resid = xg[:, obs] - mean[obs]
                quad = np.einsum("ij,ij->i", resid, np.linalg.solve(s_oo, resid.T).T)
                loglik += -0.5 * (
                    k * (obs.size * np.log(2 * np.pi) + logdet) + quad.sum()
                )
        mean = sum_x / n
        cov = sum_xx / n - np.outer(mean, mean)
        cov = 0.5 * (cov + cov.T)
        logliks.append(loglik)
        if len(logliks) > 1 and logliks[-1] - logliks[-2] < tol:
            converged = True
            break
    return MvnModel(mean, cov, np.asarray(logliks), it, converged)


@dataclass(frozen=True)
class EmGlmModel:
    glm: GlmModel
    covariate_model: MvnModel
    mc_draws: int
    converged: bool


def _mvn_with_response(mm: MaskedMatrix, y: np.ndarray) -> MvnModel:
    values = np.column_stack([mm.values, y])
    mask = np.column_stack([mm.mask, np.ones(len(y), dtype=bool)])
    joint = MaskedMatrix(values, mask, mm.column_names + ("__y__",))
    return fit_mvn_em(joint)


def fit_em_glm(
    mm: MaskedMatrix, y: np.ndarray, family: str, mc_draws: int = DEFAULT_MC_DRAWS,
    rng: np.random.Generator | None = None,
) -> EmGlmModel:
    """GLM with incomplete covariates; see module docstring for the two routes."""
    y = np.asarray(y, dtype=float)
    if y.shape != (mm.n_rows,) or not np.all(np.isfinite(y)):
        raise SchemaError("y must be fully observed")
    if family not in ("linear", "logistic"):
        raise SpecError(f"unknown family {family!r}")

    if mm.is_complete:
        glm = fit_glm(mm.values, y, family)
        cov_model = fit_mvn_em(mm)
        return EmGlmModel(glm, cov_model, mc_draws, glm.converged or family == "linear")

    if family == "linear":
        joint = _mvn_with_response(mm, y)
        p = mm.n_cols
        s_xx = joint.covariance[:p, :p]
        s_xy = joint.covariance[:p, p]
        slopes = np.linalg.solve(s_xx, s_xy)
        intercept = joint.mean[p] - slopes @ joint.mean[:p]
        glm = GlmModel("linear", np.concatenate([[intercept], slopes]))
        cov_model = MvnModel(
            joint.mean[:p], joint.covariance[:p, :p], joint.loglik_trace,
            joint.n_iter, joint.converged,
        )
        return EmGlmModel(glm, cov_model, mc_draws, joint.converged)

    # Logistic: Monte-Carlo EM with frozen completions.
    if rng is None:
        rng = np.random.default_rng(0)
    cov_model = fit_mvn_em(mm)
    complete = mm.complete_rows()
    x_list = [mm.values[complete]]
    y_list = [y[complete]]
    row_of = [np.flatnonzero(complete)]
    incomplete_idx = np.flatnonzero(~complete)
    draws_per_row = []
    for i in incomplete_idx:
        xi = _draw_completions(cov_model, mm.values[i], mm.mask[i], mc_draws, rng)
        x_list.append(xi)
        y_list.append(np.full(mc_draws, y[i]))
        row_of.append(np.full(mc_draws, i))
        draws_per_row.append(mc_draws)
    x_aug = np.vstack(x_list)
    y_aug = np.concatenate(y_list)
    rows = np.concatenate(row_of)
    base_w = np.ones(len(y_aug))
    n_complete = int(complete.sum())

    beta = fit_glm(x_aug, y_aug, "logistic", weights=_normalize_by_row(base_w, rows, n_complete)).coefficients
    stable = 0
    converged = False
    it = 0
    for it in range(1, MCEM_MAX_ITER + 1):
        # E-step: importance weights proportional to p(y | x^(k); beta).
        eta = beta[0] + x_aug @ beta[1:]
        lik = np.where(y_aug == 1.0, expit(eta), expit(-eta))
        w = _normalize_by_row(lik, rows, n_complete)
        model = fit_glm(x_aug, y_aug, "logistic", weights=w)
        new_beta = model.coefficients
        denom = np.maximum(np.abs(beta), 1e-8)
        rel = float(np.max(np.abs(new_beta - beta) / denom))
        beta = new_beta
        if rel < MCEM_REL_TOL:
            stable += 1
            if stable >= MCEM_STABLE_ITERS:
                converged = True
                break
        else:
            stable = 0
    glm = GlmModel("logistic", beta, it, converged=converged)
    return EmGlmModel(glm, cov_model, mc_draws, converged and cov_model.converged)


def _normalize_by_row(w: np.ndarray, rows: np.ndarray, n_complete: int) -> np.ndarray:
    """Scale draw weights so each original row contributes total weight one."""
    out = w.copy()
    out[:n_complete] = 1.0
    tail_rows = rows[n_complete:]
    tail = w[n_complete:]
    if tail.size:
        order = np.argsort(tail_rows, kind="stable")
        sorted_rows = tail_rows[order]
        sorted_w = tail[order]
        totals = np.zeros_like(sorted_w)
        start = 0
        for i in range(1, len(sorted_rows) + 1):
            if i == len(sorted_rows) or sorted_rows[i] != sorted_rows[start]:
                s = sorted_w[start:i].sum()
                totals[start:i] = s if s > 0 else 1.0
                start = i
        normalized = sorted_w / totals
        back = np.empty_like(normalized)
        back[order] = normalized
        out[n_complete:] = back
    return out


def _draw_completions(
    model: MvnModel, values: np.ndarray, mask: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """K completions of one row from the Gaussian conditional given observed coords."""
    cond_mean, cond_cov = model.conditional(values, mask)
    mis = np.flatnonzero(~mask)
    out = np.tile(np.where(mask, values, 0.0), (k, 1))
    if mis.size:
        cond_cov = 0.5 * (cond_cov + cond_cov.T) + 1e-10 * np.eye(mis.size)
        chol = np.linalg.cholesky(cond_cov)
        z = rng.standard_normal((k, mis.size))
        out[:, mis] = cond_mean + z @ chol.T
    return out


def predict_em(model: EmGlmModel, row, mask=None, rng: np.random.Generator | None = None) -> float:
    """Prediction for one possibly incomplete row."""
    row = np.asarray(row, dtype=float)
    mask = np.ones(row.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.all():
        return float(model.glm.predict(row[None, :])[0])
    if model.glm.family == "linear":
        filled = model.covariate_model.complete_by_conditional_mean(row, mask)
        return float(model.glm.predict(filled[None, :])[0])
    if rng is None:
        rng = np.random.default_rng(0)
    draws = _draw_completions(model.covariate_model, row, mask, model.mc_draws, rng)
    return float(model.glm.predict(draws).mean())


def predict_em_matrix(
    model: EmGlmModel, mm: MaskedMatrix, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Vectorized ``predict_em`` over the rows of a masked matrix."""
    if rng is None:
        rng = np.random.default_rng(0)
    out = np.empty(mm.n_rows)
    complete = mm.complete_rows()
    if complete.any():
        out[complete] = model.glm.predict(mm.values[complete])
    if model.glm.family == "linear":
        for pattern, idx in _pattern_groups(mm.mask):
            if pattern.all():
                continue
            filled = _fill_conditional_mean(model.covariate_model, mm.values[idx], pattern)
            out[idx] = model.glm.predict(filled)
    else:
        for i in np.flatnonzero(~complete):
            out[i] = predict_em(model, mm.values[i], mm.mask[i], rng)
    return out


def _fill_conditional_mean(model: MvnModel, xg: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    obs = np.flatnonzero(pattern)
    mis = np.flatnonzero(~pattern)
    filled = xg.copy()
    if mis.size == 0:
        return filled
    if obs.size == 0:
        filled[:, mis] = model.mean[mis]
        return filled
    s_oo = model.covariance[np.ix_(obs, obs)]
    s_mo = model.covariance[np.ix_(mis, obs)]
    sol = np.linalg.solve(s_oo, s_mo.T).T
    filled[:, mis] = model.mean[mis] + (xg[:, obs] - model.mean[obs]) @ sol.T
    return filled

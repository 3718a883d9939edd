"""Target-population ATE estimators and their missing-data variants.

Complete-data estimators: difference in means (DM), inverse probability of
sampling weighting (IPSW), conditional outcome / g-formula (CO), augmented
IPSW (AIPSW), and entropy-balancing calibration weighting (CW). Incomplete
data is handled either by completing it first (complete cases or multiple
imputation followed by Rubin pooling) or by running star-variants whose
nuisances consume observed values plus the missingness pattern directly
(EM-based GLMs or MIA forests).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .data import (
    EstimateReport,
    MaskedMatrix,
    StackedSample,
    TargetSample,
    TrialSample,
    complete_cases,
    stack,
)
from .em import DEFAULT_MC_DRAWS, fit_em_glm, predict_em_matrix
from .errors import (
    DegenerateSampleError,
    InfeasibleCalibrationError,
    NumericalError,
    SchemaError,
    SpecError,
)
from .forest import (
    MiaForestParams,
    fit_mia_forest,
    forest_predict_matrix,
    forest_predict_oob,
)
from .glm import fit_glm
from .imputation import multi_impute, rubin_pool

ESTIMATORS = ("dm", "ipsw", "co", "aipsw", "cw")
ENGINES = ("parametric", "forest")
HANDLERS = ("none", "cc", "wi-mi", "ah-mi", "fe-mi", "em", "mia")
MOMENTS = ("first", "first+second")

SCORE_CLIP = 0.01
CALIBRATION_TOL = 1e-8
CALIBRATION_MAX_ITER = 200
MI_BOOTSTRAP_B = 50


@dataclass(frozen=True)
class MethodSpec:
    """Which estimator to run, with which engine and missing-data handler."""

    estimator: str = "aipsw"
    engine: str = "parametric"
    missing_handler: str = "none"
    stabilized: bool = False
    moments: str = "first"
    m_imputations: int = 10
    chain_iters: int = 10
    mc_draws: int = DEFAULT_MC_DRAWS
    forest_params: MiaForestParams = field(default_factory=MiaForestParams)

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise SpecError(f"unknown estimator {self.estimator!r}")
        if self.engine not in ENGINES:
            raise SpecError(f"unknown engine {self.engine!r}")
        if self.missing_handler not in HANDLERS:
            raise SpecError(f"unknown missing handler {self.missing_handler!r}")
        if self.moments not in MOMENTS:
            raise SpecError(f"unknown moments choice {self.moments!r}")
        if self.missing_handler == "em" and self.engine != "parametric":
            raise SpecError("the EM handler requires the parametric engine")
        if self.missing_handler == "mia" and self.engine != "forest":
            raise SpecError("the MIA handler requires the forest engine")
        if self.estimator == "cw" and self.missing_handler in ("em", "mia"):
            raise SpecError("calibration weighting is unavailable on incomplete data")

    def label(self) -> str:
        return f"{self.estimator}/{self.engine}/{self.missing_handler}"


def diff_in_means(t: TrialSample) -> float:
    """Trial-only difference in means (no generalization)."""
    t.require_both_arms()
    a = t.treatment.astype(bool)
    return float(t.outcome[a].mean() - t.outcome[~a].mean())


def ipsw(t: TrialSample, rhat: np.ndarray, stabilized: bool = False) -> float:
    """Density-ratio-weighted difference of trial outcomes."""
    rhat = np.asarray(rhat, dtype=float)
    if rhat.shape != (t.n,) or not np.all(np.isfinite(rhat)) or (rhat <= 0).any():
        raise SpecError("rhat must be finite positive, one per trial row")
    sign = 2.0 * t.treatment - 1.0
    if not stabilized:
        return float((2.0 / t.n) * np.sum(rhat * t.outcome * sign))
    t.require_both_arms()
    a = t.treatment.astype(bool)
    w1 = rhat[a] / rhat[a].sum()
    w0 = rhat[~a] / rhat[~a].sum()
    return float(np.sum(w1 * t.outcome[a]) - np.sum(w0 * t.outcome[~a]))


def aipsw_combine(
    t: TrialSample,
    rhat: np.ndarray,
    mu1_trial: np.ndarray,
    mu0_trial: np.ndarray,
    mu1_target: np.ndarray,
    mu0_target: np.ndarray,
) -> float:
    """Augmented IPSW from precomputed weights and outcome-model predictions."""
    a = t.treatment.astype(float)
    resid = a * (t.outcome - mu1_trial) - (1.0 - a) * (t.outcome - mu0_trial)
    correction = (2.0 / t.n) * np.sum(rhat * resid)
    return float(correction + np.mean(mu1_target - mu0_target))


def cw_estimate(t: TrialSample, omega: np.ndarray) -> float:
    """Entropy-balancing weighted difference of trial outcomes."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (t.n,):
        raise SpecError("one weight per trial row")
    sign = 2.0 * t.treatment - 1.0
    return float(2.0 * np.sum(omega * t.outcome * sign))


def _check_hull(g: np.ndarray, g_tilde: np.ndarray) -> None:
    """Feasibility of sum(w g_i) = g_tilde, w >= 0, sum w = 1 (an LP)."""
    n, k = g.shape
    a_eq = np.vstack([g.T, np.ones((1, n))])
    b_eq = np.concatenate([g_tilde, [1.0]])
    res = linprog(np.zeros(n), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise InfeasibleCalibrationError(
            "target moments lie outside the convex hull of the trial moments"
        )


def calibration_weights(g_trial: np.ndarray, g_tilde: np.ndarray) -> np.ndarray:
    """Entropy-balancing weights via Newton iterations on the dual."""
    g = np.atleast_2d(np.asarray(g_trial, dtype=float))
    g_tilde = np.asarray(g_tilde, dtype=float).ravel()
    n, k = g.shape
    if g_tilde.shape != (k,):
        raise SpecError("g_tilde must match the moment dimension")
    _check_hull(g, g_tilde)

    gc = g - g_tilde  # shift so the constraint residual is the dual gradient
    scale = np.maximum(np.abs(gc).max(axis=0), 1e-12)
    gs = gc / scale
    lam = np.zeros(k)
    for _ in range(CALIBRATION_MAX_ITER):
        eta = gs @ lam
        eta -= eta.max()
        w = np.exp(eta)
        w /= w.sum()
        grad = w @ gs
        if np.max(np.abs(grad * scale)) < CALIBRATION_TOL:
            residual = np.abs(w @ g - g_tilde).max()
            if residual >= 1e-6:
                raise NumericalError(f"calibration residual {residual:.2e} above 1e-6")
            return w
        hess = (gs * w[:, None]).T @ gs - np.outer(grad, grad)
        try:
            step = np.linalg.solve(hess + 1e-12 * np.eye(k), grad)
        except np.linalg.LinAlgError:
            raise NumericalError("singular Hessian in calibration Newton solve")
        # Damped Newton keeps the dual objective decreasing for hard targets.
        lam = lam - np.clip(step, -50, 50)
    raise NumericalError("calibration Newton did not converge in 200 steps")


def _moment_features(x: np.ndarray, moments: str) -> np.ndarray:
    return x if moments == "first" else np.column_stack([x, x**2])


@dataclass
class _Nuisances:
    rhat: np.ndarray | None = None
    mu1_trial: np.ndarray | None = None
    mu0_trial: np.ndarray | None = None
    mu1_target: np.ndarray | None = None
    mu0_target: np.ndarray | None = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)


def estimate_density_ratio(
    s: StackedSample,
    engine: str = "parametric",
    handler: str = "none",
    spec: MethodSpec | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Per-trial-row estimate of p_target / p_trial from membership odds.

    Fits a source-membership classifier, clips the trial-membership scores
    to [SCORE_CLIP, 1 - SCORE_CLIP], and converts them with the n/m prior
    correction: r = (n/m) * (1 - pi) / pi.
    """
    spec = spec or MethodSpec(engine=engine, missing_handler=handler)
    if rng is None:
        rng = np.random.default_rng(0)
    n, m = s.n_trial, s.n_target
    if n == 0 or m == 0:
        raise DegenerateSampleError("both sources must be non-empty")
    scores, diag = _membership_scores(s, engine, handler, spec, rng)
    pi = np.clip(scores[:n], SCORE_CLIP, 1.0 - SCORE_CLIP)
    rhat = (n / m) * (1.0 - pi) / pi
    diag["rhat_min"] = float(rhat.min())
    diag["rhat_max"] = float(rhat.max())
    return rhat, diag


def _membership_scores(s, engine, handler, spec, rng) -> tuple[np.ndarray, dict]:
    """P(row is a trial row | covariates) for every stacked row."""
    diag: dict = {}
    y = s.source.astype(float)
    if handler in ("em",):
        model = fit_em_glm(s.covariates, y, "logistic", spec.mc_draws, rng)
        diag["em_converged"] = model.converged
        diag["em_iterations"] = model.glm.n_iter
        if not model.converged:
            diag["non_convergence"] = "membership EM"
        return predict_em_matrix(model, s.covariates, rng), diag
    if engine == "forest" or handler == "mia":
        forest = fit_mia_forest(s.covariates, y, spec.forest_params, "probability", rng)
        # These rows are the forest's own training data: out-of-bag
        # predictions keep each row's source label out of its score.
        return forest_predict_oob(forest, s.covariates), diag
    if not s.covariates.is_complete:
        raise SchemaError("parametric membership model requires complete covariates")
    model = fit_glm(s.covariates.values, y, "logistic")
    diag["separation"] = model.separation
    return np.asarray(model.predict(s.covariates.values)), diag


def _fit_outcome_models(s: StackedSample, spec: MethodSpec, rng) -> _Nuisances:
    """Arm-wise outcome regressions on trial rows, predicted on both sources."""
    t = s.trial()
    t.require_both_arms()
    nu = _Nuisances()
    trial_mm = s.covariates.take(slice(0, s.n_trial))
    target_mm = s.covariates.take(slice(s.n_trial, None))
    preds = {}
    for arm in (0, 1):
        rows = t.treatment == arm
        if int(rows.sum()) < 2:
            raise DegenerateSampleError(f"trial arm {arm} too small to fit the outcome model")
        arm_mm = trial_mm.take(rows)
        yy = t.outcome[rows]
        if spec.missing_handler == "em":
            model = fit_em_glm(arm_mm, yy, "linear", spec.mc_draws, rng)
            if not model.converged:
                nu.converged = False
                nu.diagnostics["non_convergence"] = f"outcome EM arm {arm}"
            preds[arm] = (
                predict_em_matrix(model, trial_mm, rng),
                predict_em_matrix(model, target_mm, rng),
            )
        elif spec.engine == "forest":
            forest = fit_mia_forest(arm_mm, yy, spec.forest_params, "regression", rng)
            # The fitted arm's own rows get out-of-bag predictions so the
            # residuals entering the augmentation term are not memorized.
            mu_trial = forest_predict_matrix(forest, trial_mm)
            mu_trial[np.flatnonzero(rows)] = forest_predict_oob(forest, arm_mm)
            preds[arm] = (mu_trial, forest_predict_matrix(forest, target_mm))
        else:
            if not arm_mm.is_complete:
                raise SchemaError("parametric outcome model requires complete covariates")
            model = fit_glm(arm_mm.values, yy, "linear")
            preds[arm] = (
                np.asarray(model.predict(trial_mm.values)),
                np.asarray(model.predict(target_mm.values)),
            )
    nu.mu0_trial, nu.mu0_target = preds[0]
    nu.mu1_trial, nu.mu1_target = preds[1]
    return nu


def conditional_outcome(
    t: TrialSample,
    tgt: TargetSample,
    engine: str = "parametric",
    handler: str = "none",
    spec: MethodSpec | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """g-formula estimate: average predicted CATE over the target sample."""
    spec = spec or MethodSpec(estimator="co", engine=engine, missing_handler=handler)
    nu = _fit_outcome_models(stack(t, tgt), spec, rng or np.random.default_rng(0))
    return float(np.mean(nu.mu1_target - nu.mu0_target))


def aipsw(
    t: TrialSample,
    tgt: TargetSample,
    rhat: np.ndarray,
    mu_models: _Nuisances,
) -> float:
    """Doubly robust combination of precomputed nuisances."""
    return aipsw_combine(
        t, rhat, mu_models.mu1_trial, mu_models.mu0_trial,
        mu_models.mu1_target, mu_models.mu0_target,
    )


def _point_estimate(s: StackedSample, spec: MethodSpec, rng) -> tuple[float, _Nuisances]:
    """Run one estimator on a handler-prepared stacked sample."""
    t = s.trial()
    nu = _Nuisances()
    if spec.estimator == "dm":
        return diff_in_means(t), nu

    if spec.estimator == "cw":
        x_trial = s.covariates.values[: s.n_trial]
        x_target = s.covariates.values[s.n_trial :]
        if not s.covariates.is_complete:
            raise SchemaError("calibration weighting requires complete covariates")
        g = _moment_features(x_trial, spec.moments)
        g_tilde = _moment_features(x_target, spec.moments).mean(axis=0)
        omega = calibration_weights(g, g_tilde)
        nu.diagnostics["omega_max"] = float(omega.max())
        return cw_estimate(t, omega), nu

    if spec.estimator in ("ipsw", "aipsw"):
        rhat, diag = estimate_density_ratio(s, spec.engine, spec.missing_handler, spec, rng)
        nu.rhat = rhat
        nu.diagnostics.update(diag)
        if diag.get("non_convergence"):
            nu.converged = False
    if spec.estimator in ("co", "aipsw"):
        mu = _fit_outcome_models(s, spec, rng)
        nu.mu1_trial, nu.mu0_trial = mu.mu1_trial, mu.mu0_trial
        nu.mu1_target, nu.mu0_target = mu.mu1_target, mu.mu0_target
        nu.converged = nu.converged and mu.converged
        nu.diagnostics.update(mu.diagnostics)

    if spec.estimator == "ipsw":
        return ipsw(t, nu.rhat, spec.stabilized), nu
    if spec.estimator == "co":
        return float(np.mean(nu.mu1_target - nu.mu0_target)), nu
    return aipsw(t, s.target(), nu.rhat, nu), nu


def _stratified_resample(s: StackedSample, rng) -> StackedSample:
    n, m = s.n_trial, s.n_target
    trial_rows = rng.integers(0, n, size=n)
    target_rows = rng.integers(0, m, size=m)
    return stack(s.trial().take(trial_rows), s.target().take(target_rows))


def _bootstrap_variance(s: StackedSample, spec: MethodSpec, b: int, rng) -> float:
    points = []
    for _ in range(b):
        try:
            points.append(_point_estimate(_stratified_resample(s, rng), spec, rng)[0])
        except (DegenerateSampleError, NumericalError, InfeasibleCalibrationError):
            continue
    if len(points) < 2:
        raise NumericalError("too few successful bootstrap resamples for a variance")
    return float(np.var(points, ddof=1))


def estimate(
    s: StackedSample,
    spec: MethodSpec,
    rng: np.random.Generator | None = None,
    with_variance: bool = False,
    bootstrap_b: int = MI_BOOTSTRAP_B,
) -> EstimateReport:
    """Dispatch on the missing-data handler and produce a full report."""
    if rng is None:
        rng = np.random.default_rng(0)
    handler = spec.missing_handler
    diagnostics: dict = {}

    if handler == "none":
        if not s.covariates.is_complete:
            raise SchemaError("handler 'none' requires complete covariates")
        work = [s]
    elif handler == "cc":
        work = [complete_cases(s)]
        diagnostics["cc_n_trial"] = work[0].n_trial
        diagnostics["cc_n_target"] = work[0].n_target
    elif handler in ("wi-mi", "ah-mi", "fe-mi"):
        strategy = {"wi-mi": "WI", "ah-mi": "AH", "fe-mi": "FE"}[handler]
        work = multi_impute(s, strategy, spec.m_imputations, spec.chain_iters, rng)
    else:  # em / mia star-variants consume the mask directly
        work = [s]

    points = []
    variances = [] if with_variance else None
    converged = True
    for w in work:
        point, nu = _point_estimate(w, spec, rng)
        points.append(point)
        converged = converged and nu.converged
        diagnostics.update(nu.diagnostics)
        if with_variance:
            variances.append(_bootstrap_variance(w, spec, bootstrap_b, rng))

    if len(points) == 1:
        point = points[0]
        variance = ci_low = ci_high = None
        if with_variance:
            variance = variances[0]
            half = 1.959963984540054 * np.sqrt(variance)
            ci_low, ci_high = point - half, point + half
    else:
        pooled = rubin_pool(points, variances)
        point = pooled.estimate
        variance, ci_low, ci_high = pooled.total_var, pooled.ci_low, pooled.ci_high
        diagnostics["mi_between_var"] = pooled.between_var

    return EstimateReport(
        estimate=point,
        method=spec.estimator,
        missing_handler=handler,
        n_trial=s.n_trial,
        n_target=s.n_target,
        variance=variance,
        ci_low=ci_low,
        ci_high=ci_high,
        converged=converged,
        diagnostics=diagnostics,
    )

"""Synthetic designs: moments, selection scales, outcome surfaces, regimes."""

import numpy as np
import pytest
from scipy.special import expit

import rctgen as rg
from rctgen.dgp import (
    ATE_LINEAR,
    ATE_NONLINEAR,
    E_ABS_SIN,
    draw_covariates,
    outcome_means,
    selection_logits,
    selection_probability,
)
from rctgen.errors import SpecError


class TestCovariates:
    def test_moments_large_sample(self):
        cfg = rg.SimulationConfig()
        x = draw_covariates(200_000, cfg, np.random.default_rng(0))
        assert np.allclose(x.mean(axis=0), 1.0, atol=0.02)
        c = np.corrcoef(x.T)
        assert np.allclose(np.diag(c), 1.0)
        off = c[~np.eye(4, dtype=bool)]
        assert np.allclose(off, 0.6, atol=0.02)

    def test_covariance_matrix(self):
        cfg = rg.SimulationConfig(covariate_dim=3, covariate_correlation=0.2)
        sigma = cfg.covariance()
        assert sigma.shape == (3, 3)
        assert np.allclose(np.diag(sigma), 1.0)
        assert sigma[0, 1] == 0.2


class TestSelectionModels:
    def test_std_linear_at_mean(self):
        """At x = (1,1,1,1) the logit is -3.1 - 1.7 = -4.8."""
        p = selection_probability(np.ones(4), None, "StdLinear")
        assert np.isclose(p, expit(-4.8), atol=1e-12)

    def test_intercept_scales(self):
        """Intercepts reproduce the stated baseline probabilities at x=0."""
        assert np.isclose(
            selection_probability(np.zeros(4), None, "StdLinear"), expit(-3.1)
        )
        assert np.isclose(expit(-3.1), 0.04311, atol=5e-5)
        assert np.isclose(
            selection_probability(np.zeros(4), np.ones(4, bool), "CisLinear"), expit(-2.5)
        )
        assert np.isclose(expit(-2.5), 0.07586, atol=5e-5)

    def test_cis_masked_terms_vanish(self):
        """A fully masked row falls back to the intercept alone."""
        x = np.array([5.0, -3.0, 2.0, 7.0])
        p = selection_probability(x, np.zeros(4, bool), "CisLinear")
        assert np.isclose(p, expit(-2.5), atol=1e-12)

    def test_cis_partial_mask(self):
        x = np.array([2.0, 1.0, 1.0, 1.0])
        mask = np.array([True, False, True, False])
        p = selection_probability(x, mask, "CisLinear")
        assert np.isclose(p, expit(-2.5 - 0.5 * 2.0 - 0.5 * 1.0), atol=1e-12)

    def test_std_requires_complete(self):
        with pytest.raises(SpecError):
            selection_logits(np.ones((2, 4)), np.zeros((2, 4), bool), "StdLinear")

    def test_cis_masked_values_never_read(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        mask = np.array([True, False, True, True])
        p1 = selection_probability(x, mask, "CisLinear")
        x2 = x.copy()
        x2[1] = 1e9
        p2 = selection_probability(x2, mask, "CisLinear")
        assert p1 == p2


class TestOutcomeModels:
    def test_linear_treatment_contrast_is_modifier(self):
        """mu1 - mu0 = 27.4 * x1; baseline terms cancel exactly."""
        rng = np.random.default_rng(1)
        x = rng.standard_normal((100, 4))
        contrast = outcome_means(x, 1, "Linear") - outcome_means(x, 0, "Linear")
        assert np.allclose(contrast, 27.4 * x[:, 0], atol=1e-10)

    def test_linear_surface_value(self):
        x = np.ones((1, 4))
        assert np.isclose(outcome_means(x, 0, "Linear")[0], -100 + 3 * 13.7)
        assert np.isclose(outcome_means(x, 1, "Linear")[0], -100 + 27.4 + 3 * 13.7)

    def test_nonlinear_contrast(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((50, 4)) + 1.0
        contrast = outcome_means(x, 1, "Nonlinear") - outcome_means(x, 0, "Nonlinear")
        expected = 27.4 * (np.abs(x[:, 0]) * np.sin(x[:, 0]) + 1.5)
        assert np.allclose(contrast, expected, atol=1e-10)

    def test_ground_truth_constants(self):
        assert ATE_LINEAR == 27.4
        # E|X|sin(X) for X ~ N(1,1), via quadrature
        assert np.isclose(E_ABS_SIN, 0.7257169562778817)
        assert np.isclose(ATE_NONLINEAR, 27.4 * (E_ABS_SIN + 1.5))
        # Monte-Carlo confirmation of the population ATE
        x1 = np.random.default_rng(3).normal(1.0, 1.0, 2_000_000)
        mc = 27.4 * (np.abs(x1) * np.sin(x1) + 1.5).mean()
        assert abs(mc - ATE_NONLINEAR) < 0.05


class TestConfigValidation:
    def test_cis_assumption_requires_cis_model(self):
        with pytest.raises(SpecError):
            rg.SimulationConfig(assumption="CIS", selection_model="StdLinear")
        with pytest.raises(SpecError):
            rg.SimulationConfig(assumption="Standard", selection_model="CisLinear")

    def test_unknown_models(self):
        with pytest.raises(SpecError):
            rg.SimulationConfig(selection_model="Quadratic")
        with pytest.raises(SpecError):
            rg.SimulationConfig(outcome_model="Cubic")


class TestSimulate:
    def test_shapes_and_truth(self):
        cfg = rg.SimulationConfig(n_trial=200, m=1500)
        trial, target, truth = rg.simulate(cfg, np.random.default_rng(4))
        assert truth == 27.4
        assert target.m == 1500
        # trial size is random around the request
        assert 100 < trial.n < 350
        assert trial.covariates.mask.all()

    def test_covariate_shift_direction(self):
        """Selection favors small covariates, so trial X1 mean < target's."""
        cfg = rg.SimulationConfig(n_trial=500, m=5000)
        trial, target, _ = rg.simulate(cfg, np.random.default_rng(5))
        assert trial.covariates.values[:, 0].mean() < target.covariates.values[:, 0].mean() - 0.5

    def test_arms_roughly_balanced(self):
        cfg = rg.SimulationConfig(n_trial=800, m=1000)
        trial, _, _ = rg.simulate(cfg, np.random.default_rng(6))
        share = trial.treatment.mean()
        assert 0.4 < share < 0.6

    def test_deterministic_under_seed(self):
        cfg = rg.SimulationConfig(n_trial=100, m=500)
        t1, o1, _ = rg.simulate(cfg, np.random.default_rng(7))
        t2, o2, _ = rg.simulate(cfg, np.random.default_rng(7))
        assert np.array_equal(t1.covariates.values, t2.covariates.values)
        assert np.array_equal(t1.outcome, t2.outcome)
        assert np.array_equal(o1.covariates.to_nan(), o2.covariates.to_nan(), equal_nan=True)

    def test_standard_amputation_after_selection(self):
        """Under the standard regime trial covariates carry the requested NA rate."""
        spec = rg.AmputationSpec("MCAR", 0.3)
        cfg = rg.SimulationConfig(
            n_trial=800, m=2000, trial_amputation=spec, target_amputation=spec
        )
        trial, target, _ = rg.simulate(cfg, np.random.default_rng(8))
        assert abs((~trial.covariates.mask).mean() - 0.3) < 0.05
        assert abs((~target.covariates.mask).mean() - 0.3) < 0.05

    def test_cis_selection_depends_on_pattern(self):
        """Masking lifts selection logits toward the intercept, so under CIS
        incomplete rows are selected at a different rate than complete ones."""
        spec = rg.AmputationSpec("MCAR", 0.3)
        cfg = rg.SimulationConfig(
            n_trial=600,
            m=2000,
            selection_model="CisLinear",
            assumption="CIS",
            trial_amputation=spec,
            target_amputation=spec,
        )
        trial, _, _ = rg.simulate(cfg, np.random.default_rng(9))
        # amputation happened before selection: trial rows carry missing values
        assert not trial.covariates.mask.all()

    def test_outcomes_match_surface(self):
        """Outcome noise is unit scale around the model surface."""
        cfg = rg.SimulationConfig(n_trial=500, m=500)
        trial, _, _ = rg.simulate(cfg, np.random.default_rng(10))
        resid = trial.outcome - outcome_means(
            trial.covariates.values, trial.treatment, "Linear"
        )
        assert abs(resid.mean()) < 0.2
        assert 0.8 < resid.std() < 1.2

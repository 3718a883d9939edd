"""EM layers: MVN maximum likelihood, EM-GLMs, predictive completion."""

import numpy as np
import pytest
from scipy import integrate
from scipy.special import expit

from rctgen.data import MaskedMatrix
from rctgen.em import fit_em_glm, fit_mvn_em, predict_em, predict_em_matrix
from rctgen.errors import SchemaError
from rctgen.glm import fit_glm


def mvn_sample(n, mean, cov, seed=0):
    return np.random.default_rng(seed).multivariate_normal(mean, cov, size=n)


class TestMvnEm:
    def test_complete_data_fixed_point(self):
        """No missing values: one E-step reproduces the sample MLE (denominator n)."""
        x = mvn_sample(400, [0.0, 1.0], [[2.0, 0.5], [0.5, 1.0]], seed=1)
        mm = MaskedMatrix.from_values(x, ("a", "b"))
        model = fit_mvn_em(mm)
        assert np.allclose(model.mean, x.mean(axis=0), atol=1e-8)
        assert np.allclose(model.covariance, np.cov(x.T, bias=True), atol=1e-8)

    def test_monotone_loglik(self):
        x = mvn_sample(300, [1.0, 1.0, 1.0], np.eye(3) + 0.4, seed=2)
        x[np.random.default_rng(3).random(x.shape) < 0.3] = np.nan
        model = fit_mvn_em(MaskedMatrix.from_values(x, ("a", "b", "c")))
        diffs = np.diff(model.loglik_trace)
        assert (diffs > -1e-7).all()
        assert model.converged

    def test_monotone_pattern_closed_form(self):
        """Bivariate monotone missingness has a closed-form MLE (regression
        factorization); EM must match it to 1e-6."""
        rng = np.random.default_rng(4)
        n = 600
        x1 = rng.normal(1.0, 1.5, n)
        x2 = 0.5 + 0.8 * x1 + rng.normal(0, 0.7, n)
        x = np.column_stack([x1, x2])
        x[300:, 1] = np.nan  # x2 missing for half the rows, x1 always observed
        model = fit_mvn_em(MaskedMatrix.from_values(x, ("a", "b")), tol=1e-12)

        # Closed form: x1 moments from all rows; regression of x2 on x1 from
        # complete rows (Anderson 1957).
        mu1 = x1.mean()
        s11 = x1.var()
        xc, yc = x1[:300], x2[:300]
        beta = np.polyfit(xc, yc, 1)[0]
        alpha = yc.mean() - beta * xc.mean()
        mu2 = alpha + beta * mu1
        s12 = beta * s11
        s22 = yc.var() - beta**2 * xc.var() + beta**2 * s11
        assert np.isclose(model.mean[0], mu1, atol=1e-6)
        assert np.isclose(model.mean[1], mu2, atol=1e-6)
        assert np.isclose(model.covariance[0, 0], s11, atol=1e-6)
        assert np.isclose(model.covariance[0, 1], s12, atol=1e-6)
        assert np.isclose(model.covariance[1, 1], s22, atol=1e-6)

    def test_column_observed_fewer_than_twice(self):
        x = np.array([[1.0, np.nan], [2.0, 3.0], [0.5, np.nan]])
        x[1, 1] = np.nan
        with pytest.raises(SchemaError):
            fit_mvn_em(MaskedMatrix.from_values(x, ("a", "b")))

    def test_conditional_moments(self):
        x = mvn_sample(50_000, [0.0, 0.0], [[1.0, 0.6], [0.6, 1.0]], seed=5)
        model = fit_mvn_em(MaskedMatrix.from_values(x, ("a", "b")))
        cm, cc = model.conditional(np.array([2.0, 0.0]), np.array([True, False]))
        assert np.isclose(cm[0], 0.6 * 2.0, atol=0.05)
        assert np.isclose(cc[0, 0], 1 - 0.36, atol=0.05)


class TestEmGlm:
    def test_complete_data_matches_fit_glm(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((200, 3))
        y = 1.0 + x @ np.array([0.5, -1.0, 2.0]) + 0.1 * rng.standard_normal(200)
        mm = MaskedMatrix.from_values(x, ("a", "b", "c"))
        em = fit_em_glm(mm, y, "linear")
        direct = fit_glm(x, y, "linear")
        assert np.allclose(em.glm.coefficients, direct.coefficients, atol=1e-6)

    def test_linear_with_missing_recovers_coefficients(self):
        rng = np.random.default_rng(7)
        n = 4000
        x = mvn_sample(n, [1.0, 1.0], [[1.0, 0.5], [0.5, 1.0]], seed=8)
        y = 2.0 + 1.5 * x[:, 0] - 0.5 * x[:, 1] + 0.3 * rng.standard_normal(n)
        xm = x.copy()
        xm[rng.random((n, 2)) < 0.25] = np.nan
        em = fit_em_glm(MaskedMatrix.from_values(xm, ("a", "b")), y, "linear")
        assert np.allclose(em.glm.coefficients, [2.0, 1.5, -0.5], atol=0.05)

    def test_logistic_complete_shortcut(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((500, 2))
        y = (rng.random(500) < expit(x[:, 0])).astype(float)
        mm = MaskedMatrix.from_values(x, ("a", "b"))
        em = fit_em_glm(mm, y, "logistic")
        direct = fit_glm(x, y, "logistic")
        assert np.allclose(em.glm.coefficients, direct.coefficients, atol=1e-10)

    def test_logistic_mcem_recovers_slope(self):
        rng = np.random.default_rng(10)
        n = 3000
        x = mvn_sample(n, [0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], seed=11)
        y = (rng.random(n) < expit(0.3 + 1.0 * x[:, 0] - 0.5 * x[:, 1])).astype(float)
        xm = x.copy()
        xm[rng.random((n, 2)) < 0.2] = np.nan
        em = fit_em_glm(
            MaskedMatrix.from_values(xm, ("a", "b")), y, "logistic",
            rng=np.random.default_rng(12),
        )
        assert em.converged
        assert np.allclose(em.glm.coefficients, [0.3, 1.0, -0.5], atol=0.15)


class TestPrediction:
    def test_linear_fully_missing_row_is_mean_prediction(self):
        rng = np.random.default_rng(13)
        x = mvn_sample(2000, [1.0, 2.0], np.eye(2), seed=14)
        y = x @ np.array([1.0, -1.0]) + 0.1 * rng.standard_normal(2000)
        xm = x.copy()
        xm[rng.random((2000, 2)) < 0.1] = np.nan
        em = fit_em_glm(MaskedMatrix.from_values(xm, ("a", "b")), y, "linear")
        pred = predict_em(em, np.array([0.0, 0.0]), np.array([False, False]))
        expected = em.glm.predict(em.covariate_model.mean[None, :])[0]
        assert np.isclose(pred, expected, atol=1e-10)

    def test_gaussian_conditional_mean_oracle(self):
        """Linear prediction on a half-missing row equals the plug-in of the
        exact conditional mean."""
        x = mvn_sample(5000, [0.0, 0.0], [[1.0, 0.8], [0.8, 1.0]], seed=15)
        y = x @ np.array([2.0, 1.0])
        xm = x.copy()
        xm[np.random.default_rng(16).random((5000, 2)) < 0.15] = np.nan
        em = fit_em_glm(MaskedMatrix.from_values(xm, ("a", "b")), y, "linear")
        row = np.array([1.5, 0.0])
        mask = np.array([True, False])
        cm, _ = em.covariate_model.conditional(row, mask)
        filled = np.array([1.5, cm[0]])
        assert np.isclose(
            predict_em(em, row, mask), em.glm.predict(filled[None, :])[0], atol=1e-10
        )

    def test_logistic_fully_missing_quadrature_oracle(self):
        """With known beta and X ~ N(0,1), prediction on a fully missing row
        approximates E[expit(b0 + b1 X)] computed by quadrature, to 1e-2."""
        rng = np.random.default_rng(17)
        n = 5000
        x = rng.standard_normal((n, 1))
        y = (rng.random(n) < expit(0.2 + 1.3 * x[:, 0])).astype(float)
        xm = x.copy()
        xm[rng.random((n, 1)) < 0.1] = np.nan
        em = fit_em_glm(
            MaskedMatrix.from_values(xm, ("a",)), y, "logistic",
            mc_draws=1500, rng=np.random.default_rng(18),
        )
        b0, b1 = em.glm.coefficients
        mu, s2 = em.covariate_model.mean[0], em.covariate_model.covariance[0, 0]
        val, _ = integrate.quad(
            lambda t: expit(b0 + b1 * t)
            * np.exp(-0.5 * (t - mu) ** 2 / s2)
            / np.sqrt(2 * np.pi * s2),
            -10, 10,
        )
        pred = predict_em(
            em, np.array([0.0]), np.array([False]), rng=np.random.default_rng(19)
        )
        assert abs(pred - val) < 1e-2

    def test_matrix_prediction_matches_rowwise(self):
        rng = np.random.default_rng(20)
        x = mvn_sample(300, [0.0, 0.0], [[1.0, 0.4], [0.4, 1.0]], seed=21)
        y = x @ np.array([1.0, 2.0]) + 0.1 * rng.standard_normal(300)
        xm = x.copy()
        xm[rng.random((300, 2)) < 0.25] = np.nan
        mm = MaskedMatrix.from_values(xm, ("a", "b"))
        em = fit_em_glm(mm, y, "linear")
        preds = predict_em_matrix(em, mm)
        for i in (0, 7, 42):
            assert np.isclose(
                preds[i], predict_em(em, mm.values[i], mm.mask[i]), atol=1e-10
            )

"""Tests for chained-equations multiple imputation and Rubin pooling."""

import numpy as np
import pytest

from rctgen.data import MaskedMatrix, TargetSample, TrialSample, stack
from rctgen.errors import SchemaError, SpecError
from rctgen.imputation import (
    ImputationSet,
    mice_impute,
    multi_impute,
    rubin_pool,
)


def _masked_mvn(n, rho, miss, seed, p=3):
    rng = np.random.default_rng(seed)
    cov = np.full((p, p), rho) + (1 - rho) * np.eye(p)
    x = rng.multivariate_normal(np.zeros(p), cov, size=n)
    mask = rng.random((n, p)) > miss
    names = tuple(f"x{j}" for j in range(p))
    return MaskedMatrix(np.where(mask, x, 0.0), mask, names), x


def _stacked(n=120, m=200, miss=0.2, seed=0):
    rng = np.random.default_rng(seed)
    xt = rng.standard_normal((n, 3)) + 1.0
    xo = rng.standard_normal((m, 3))
    a = (rng.random(n) < 0.5).astype(np.int64)
    y = xt @ [2.0, 1.0, -1.0] + a * xt[:, 0] + 0.1 * rng.standard_normal(n)
    mt = rng.random((n, 3)) > miss
    mo = rng.random((m, 3)) > miss
    names = ("x0", "x1", "x2")
    trial = TrialSample(MaskedMatrix(np.where(mt, xt, 0.0), mt, names), a, y)
    target = TargetSample(MaskedMatrix(np.where(mo, xo, 0.0), mo, names))
    return stack(trial, target)


class TestMice:
    def test_observed_entries_untouched(self):
        mm, _ = _masked_mvn(150, 0.5, 0.3, seed=1)
        out = mice_impute(mm, m_imputations=3, rng=np.random.default_rng(2))
        for done in out.completed:
            assert np.array_equal(done[mm.mask], mm.values[mm.mask])
            assert np.all(np.isfinite(done))

    def test_imputed_values_are_donated_observations(self):
        """Continuous imputations are drawn by predictive mean matching, so
        every filled-in entry equals some observed value in its column."""
        mm, _ = _masked_mvn(150, 0.5, 0.3, seed=3)
        out = mice_impute(mm, m_imputations=2, rng=np.random.default_rng(4))
        for done in out.completed:
            for j in range(mm.n_cols):
                obs = mm.values[mm.mask[:, j], j]
                assert np.isin(done[~mm.mask[:, j], j], obs).all()

    def test_imputations_differ_across_m(self):
        mm, _ = _masked_mvn(150, 0.5, 0.3, seed=5)
        out = mice_impute(mm, m_imputations=2, rng=np.random.default_rng(6))
        a, b = out.completed
        assert not np.array_equal(a, b)

    def test_correlation_not_destroyed(self):
        mm, x = _masked_mvn(2000, 0.8, 0.25, seed=7)
        out = mice_impute(mm, m_imputations=2, rng=np.random.default_rng(8))
        for done in out.completed:
            r = np.corrcoef(done[:, 0], done[:, 1])[0, 1]
            assert abs(r - 0.8) < 0.1

    def test_complete_matrix_shortcut(self):
        x = np.random.default_rng(9).standard_normal((40, 2))
        mm = MaskedMatrix.from_values(x, ("a", "b"))
        out = mice_impute(mm, m_imputations=4)
        assert len(out.completed) == 4
        assert all(np.array_equal(v, x) for v in out.completed)

    def test_binary_column_stays_binary(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((300, 2))
        x[:, 1] = (x[:, 0] + 0.3 * rng.standard_normal(300) > 0).astype(float)
        mask = rng.random((300, 2)) > 0.2
        mm = MaskedMatrix(np.where(mask, x, 0.0), mask, ("a", "b"))
        out = mice_impute(mm, m_imputations=2, rng=rng)
        for done in out.completed:
            assert np.isin(done[:, 1], (0.0, 1.0)).all()

    def test_validation(self):
        mm, _ = _masked_mvn(60, 0.5, 0.2, seed=11)
        with pytest.raises(SpecError):
            mice_impute(mm, m_imputations=0)
        with pytest.raises(SchemaError):
            mice_impute(mm, predictors=np.ones((3, 1)))
        with pytest.raises(SchemaError):
            mice_impute(mm, interactions=(np.full(mm.n_rows, np.nan),))
        sparse = MaskedMatrix(
            np.zeros((20, 3)),
            np.column_stack([np.ones((20, 2), bool), np.arange(20) < 2]),
            ("a", "b", "c"),
        )
        with pytest.raises(SchemaError, match="'c'"):
            mice_impute(sparse)


class TestMultiImpute:
    def test_wi_returns_m_squared(self):
        s = _stacked()
        out = multi_impute(s, "WI", m_imputations=3, rng=np.random.default_rng(12))
        assert len(out) == 9

    def test_ah_and_fe_return_m(self):
        s = _stacked()
        for strategy in ("AH", "FE"):
            out = multi_impute(s, strategy, m_imputations=4, rng=np.random.default_rng(13))
            assert len(out) == 4

    def test_completed_samples_keep_structure(self):
        s = _stacked()
        for done in multi_impute(s, "FE", m_imputations=2, rng=np.random.default_rng(14)):
            assert done.n_trial == s.n_trial and done.n_target == s.n_target
            assert done.covariates.is_complete
            obs = s.covariates.mask
            assert np.array_equal(done.covariates.values[obs], s.covariates.values[obs])
            assert np.array_equal(done.treatment, s.treatment)
            assert np.array_equal(done.outcome, s.outcome)

    def test_unknown_strategy(self):
        with pytest.raises(SpecError):
            multi_impute(_stacked(), "XX")


class TestRubinPool:
    def test_hand_case(self):
        pooled = rubin_pool([1.0, 3.0], [1.0, 1.0])
        assert pooled.estimate == 2.0
        assert pooled.within_var == 1.0
        assert pooled.between_var == 2.0
        assert pooled.total_var == pytest.approx(1.0 + 1.5 * 2.0)
        assert pooled.ci_low < 2.0 < pooled.ci_high

    def test_single_imputation_total_is_within(self):
        pooled = rubin_pool([5.0], [4.0])
        assert pooled.total_var == 4.0
        assert pooled.ci_low == pytest.approx(5.0 - 1.959963984540054 * 2.0)

    def test_no_variances(self):
        pooled = rubin_pool([1.0, 2.0, 3.0])
        assert pooled.estimate == 2.0
        assert pooled.total_var is None
        assert pooled.between_var == pytest.approx(1.0)

    def test_zero_between_uses_normal_quantile(self):
        pooled = rubin_pool([2.0, 2.0], [1.0, 1.0])
        assert pooled.df == np.inf
        assert pooled.ci_high == pytest.approx(2.0 + 1.959963984540054)

    def test_validation(self):
        with pytest.raises(SpecError):
            rubin_pool([])
        with pytest.raises(SpecError):
            rubin_pool([1.0, 2.0], [1.0])
        with pytest.raises(SpecError):
            rubin_pool([1.0], [-1.0])


def test_imputation_set_metadata():
    mm, _ = _masked_mvn(80, 0.5, 0.2, seed=15)
    out = mice_impute(mm, m_imputations=2, chain_iters=5, rng=np.random.default_rng(16))
    assert isinstance(out, ImputationSet)
    assert out.m_imputations == 2 and out.chain_iters == 5

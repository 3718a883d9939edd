"""CSV conventions: NA tokens, header checks, round trips."""

import numpy as np
import pytest

import rctgen as rg
from rctgen import io
from rctgen.errors import SchemaError


@pytest.fixture
def trial(tmp_path):
    path = tmp_path / "trial.csv"
    path.write_text(
        "x1,x2,treatment,outcome\n"
        "1.5,NA,1,10.0\n"
        "NA,2.5,0,-3.0\n"
        "0.5,1.0,1,4.25\n"
    )
    return path


def test_load_trial(trial):
    t = io.load_trial_csv(trial)
    assert t.n == 3
    assert t.covariates.column_names == ("x1", "x2")
    assert not t.covariates.mask[0, 1] and not t.covariates.mask[1, 0]
    assert t.treatment.tolist() == [1, 0, 1]
    assert t.outcome[2] == 4.25


def test_source_column_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,source,treatment,outcome\n1,0,1,2\n")
    with pytest.raises(SchemaError):
        io.load_trial_csv(p)


def test_missing_treatment_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,outcome\n1,2\n")
    with pytest.raises(SchemaError):
        io.load_trial_csv(p)


def test_na_in_outcome_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,treatment,outcome\n1,1,NA\n")
    with pytest.raises(SchemaError):
        io.load_trial_csv(p)


def test_nonbinary_treatment_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,treatment,outcome\n1,2,3\n")
    with pytest.raises(SchemaError):
        io.load_trial_csv(p)


def test_target_must_not_carry_outcome(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,outcome\n1,2\n")
    with pytest.raises(SchemaError):
        io.load_target_csv(p)


def test_target_column_mismatch(tmp_path, trial):
    t = io.load_trial_csv(trial)
    p = tmp_path / "target.csv"
    p.write_text("x1,x3\n1,2\n")
    with pytest.raises(SchemaError):
        io.load_target_csv(p, expect_columns=t.covariates.column_names)


def test_round_trip_preserves_values_and_mask(tmp_path):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((25, 3))
    x[rng.random((25, 3)) < 0.3] = np.nan
    a = rng.integers(0, 2, 25)
    y = rng.standard_normal(25)
    t = rg.TrialSample(rg.MaskedMatrix.from_values(x, ("a", "b", "c")), a, y)
    path = tmp_path / "t.csv"
    io.dump_trial_csv(path, t)
    back = io.load_trial_csv(path)
    assert np.array_equal(back.covariates.mask, t.covariates.mask)
    # 17 significant digits round-trip doubles exactly
    assert np.array_equal(
        back.covariates.values[back.covariates.mask],
        t.covariates.values[t.covariates.mask],
    )
    assert np.array_equal(back.outcome, t.outcome)


def test_empty_file_rejected(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(SchemaError):
        io.load_trial_csv(p)


def test_ragged_row_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,treatment,outcome\n1,1\n")
    with pytest.raises(SchemaError):
        io.load_trial_csv(p)

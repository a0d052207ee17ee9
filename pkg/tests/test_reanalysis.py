from fractions import Fraction
from importlib.resources import files

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from attrition_rct.design import observe, pair_adjacent, randomize_within_pairs
from attrition_rct.dgp import draw_sample
from attrition_rct.errors import EstimationError, IngestionError
from attrition_rct.estimators import diff_in_means, theta_drop
from attrition_rct.reanalysis import TrialDataset, attrition_rate, dual_estimates, load_csv, pct_diffs, write_csv

FIXTURES = files("attrition_rct") / "fixtures"


def fixture(name, **kw):
    return load_csv(FIXTURES / name, **kw)


def _ols_exact(X, y):
    """Normal equations in exact rational arithmetic."""
    X = [[Fraction(v) for v in row] for row in X]
    y = [Fraction(v) for v in y]
    k = len(X[0])
    a = [[sum(r[i] * r[j] for r in X) for j in range(k)] + [sum(r[i] * t for r, t in zip(X, y))] for i in range(k)]
    for c in range(k):
        p = next(i for i in range(c, k) if a[i][c] != 0)
        a[c], a[p] = a[p], a[c]
        for i in range(k):
            if i != c and a[i][c] != 0:
                f = a[i][c] / a[c][c]
                a[i] = [u - f * v for u, v in zip(a[i], a[c])]
    return [a[i][k] / a[i][i] for i in range(k)]


def test_four_rows_fixture():
    ds = fixture("four_rows.csv")
    assert len(ds) == 4 and int((~ds.observed).sum()) == 1
    est = dual_estimates(ds)
    assert est.original == pytest.approx(1.0, abs=1e-9)
    assert est.alternative == pytest.approx(2.0, abs=1e-9)
    assert (est.abs_pct_diff, est.signed_pct_change) == pytest.approx((100.0, 100.0))
    assert est.attrition_rate == 0.25


def test_three_pairs_fixture():
    est = dual_estimates(fixture("three_pairs.csv"))
    # complete pairs: gaps 2 and 4; non-attritors: (5 + 10 + 7)/3 - (3 + 6)/2
    assert est.original == pytest.approx(3.0, abs=1e-9)
    assert est.alternative == pytest.approx(22 / 3 - 4.5, abs=1e-9)
    assert est.abs_pct_diff == pytest.approx(100 / 18, abs=1e-9)
    assert est.signed_pct_change == pytest.approx(-100 / 18, abs=1e-9)
    assert est.attrition_rate == pytest.approx(1 / 6)


def test_three_pairs_with_covariate():
    ds = fixture("three_pairs.csv", covariates=["age"])
    est = dual_estimates(ds, use_covariates=True)
    # two complete pairs, four unknowns: exact fit gives gap 3 and age slope -1/2
    assert est.original == pytest.approx(3.0, abs=1e-9)
    obs = ds.observed
    X = np.column_stack([np.ones(obs.sum()), ds.treated[obs], ds.covariates[obs, 0]])
    assert est.alternative == pytest.approx(float(_ols_exact(X.tolist(), ds.outcome[obs].tolist())[1]), abs=1e-9)


def test_paired_complete_fixture():
    est = dual_estimates(fixture("paired_complete.csv"))
    assert est.original == pytest.approx(0.75, abs=1e-9)
    assert est.alternative == pytest.approx(est.original, abs=1e-9)
    assert est.attrition_rate == 0.0


def test_pipeline_matches_estimators(tmp_path, ex1):
    t = draw_sample(ex1, 400, 3)
    pa = pair_adjacent(t.x)
    s = observe(t, randomize_within_pairs(pa, 4))
    y = np.where(s.r == 1, s.y, np.nan)
    ds = TrialDataset(y, s.d, np.array([f"p{j}" for j in pa.pair_ids()]), np.empty((400, 0)))
    path = tmp_path / "sim.csv"
    write_csv(ds, path)
    est = dual_estimates(load_csv(path))
    assert est.original == pytest.approx(theta_drop(s, pa).value, abs=1e-9)
    assert est.alternative == pytest.approx(diff_in_means(s).value, abs=1e-9)


def test_attrition_rate_table_value():
    y = np.ones(2829)
    y[:59] = np.nan
    ds = TrialDataset(y, np.tile([1, 0], 2829)[:2829].astype(np.int8), np.full(2829, "g"), np.empty((2829, 0)))
    assert attrition_rate(ds) == pytest.approx(0.02086, abs=5e-6)


def test_attrition_rate_invariances():
    ds = fixture("three_pairs.csv")
    perm = np.random.default_rng(0).permutation(len(ds))
    shuffled = TrialDataset(ds.outcome[perm] * 7.5, ds.treated[perm], ds.group[perm], ds.covariates[perm])
    assert attrition_rate(shuffled) == attrition_rate(ds)


@pytest.mark.parametrize(
    "orig, alt, expected",
    [(3.0, 3.0, (0.0, 0.0)), (2.0, -2.0, (200.0, 0.0)), (-59.702, -38.642, (35.2752, -35.2752))],
)
def test_pct_diffs(orig, alt, expected):
    assert pct_diffs(orig, alt) == pytest.approx(expected, abs=1e-4)


def test_pct_diffs_zero_original():
    with pytest.raises(EstimationError):
        pct_diffs(0.0, 1.0)


@given(st.floats(-1e6, 1e6).filter(lambda v: abs(v) > 1e-6), st.floats(-1e6, 1e6))
def test_pct_diffs_sign_symmetry(orig, alt):
    assert pct_diffs(-orig, -alt) == pytest.approx(pct_diffs(orig, alt))


# ingestion errors ------------------------------------------------------------------


def _write(tmp_path, text):
    p = tmp_path / "in.csv"
    p.write_text(text)
    return p


def test_missing_column(tmp_path):
    with pytest.raises(IngestionError, match="'treated'"):
        load_csv(_write(tmp_path, "outcome,group\n1,a\n2,a\n"))


def test_empty_file(tmp_path):
    with pytest.raises(IngestionError, match="empty"):
        load_csv(_write(tmp_path, ""))


def test_malformed_number_reports_row(tmp_path):
    with pytest.raises(IngestionError, match=r":3:"):
        load_csv(_write(tmp_path, "outcome,treated,group\n1,1,a\nabc,0,a\n"))


def test_duplicate_header(tmp_path):
    with pytest.raises(IngestionError, match="duplicate"):
        load_csv(_write(tmp_path, "outcome,treated,group,group\n1,1,a,a\n2,0,a,a\n"))


def test_bad_treated_value(tmp_path):
    with pytest.raises(IngestionError, match="0 or 1"):
        load_csv(_write(tmp_path, "outcome,treated,group\n1,2,a\n2,0,a\n"))


def test_too_few_rows(tmp_path):
    with pytest.raises(IngestionError):
        load_csv(_write(tmp_path, "outcome,treated,group\n1,1,a\n"))


def test_exhausted_arm(tmp_path):
    ds = load_csv(_write(tmp_path, "outcome,treated,group\n1,1,a\n,0,a\n"))
    with pytest.raises(EstimationError, match="exhausted"):
        dual_estimates(ds)

import math
import warnings

import numpy as np
import pytest

from attrition_rct.design import ObservedSample, PairAssignment
from attrition_rct.errors import EstimationError
from attrition_rct.inference import VarianceEstimate, adjusted_outcomes, confidence_interval, mp_variance


def test_adjusted_outcomes_hand():
    s = ObservedSample([4.0, 2.0, 6.0, 0.0], [1, 1, 1, 0], [1, 0, 1, 0])
    np.testing.assert_allclose(adjusted_outcomes(s), [-1.0, 0.0, 1.0, 0.0])


def test_mp_variance_hand(kernel):
    s = ObservedSample([3.0, 1.0, 2.0, 5.0, 4.0, 0.0, 1.0, 1.0], np.ones(8, dtype=np.int8), [1, 0, 0, 1, 1, 0, 0, 1])
    v = mp_variance(s, PairAssignment(np.arange(8)))
    assert v.tau_sq == pytest.approx(2.1875)
    assert v.lambda_sq == pytest.approx(-2.0625)
    assert v.v_sq == pytest.approx(3.21875)
    assert not v.floored


def test_mp_variance_needs_two_pairs():
    s = ObservedSample([1.0, 0.0], [1, 1], [1, 0])
    with pytest.raises(EstimationError):
        mp_variance(s, PairAssignment(np.arange(2)))


def test_ci_hand():
    ci = confidence_interval(1.0, VarianceEstimate(4.0, 0.0, 4.0, 100, False), 0.95)
    half = 1.959963984540054 * math.sqrt(4.0 / 100)
    assert ci.lower == pytest.approx(1.0 - half) and ci.upper == pytest.approx(1.0 + half)
    assert ci.center == 1.0 and ci.level == 0.95


def test_ci_floors_negative_variance():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ci = confidence_interval(2.0, VarianceEstimate(1.0, 4.0, -1.0, 10, True), 0.9)
    assert ci.lower == ci.upper == 2.0
    assert caught


@pytest.mark.parametrize("level", [0.0, 1.0, -0.2, 1.5])
def test_ci_rejects_bad_level(level):
    with pytest.raises(ValueError):
        confidence_interval(0.0, VarianceEstimate(1.0, 0.0, 1.0, 10, False), level)


def test_adjusted_outcomes_empty_arm():
    with pytest.raises(EstimationError):
        adjusted_outcomes(ObservedSample([1.0, 0.0, 2.0, 0.0], [1, 0, 1, 0], [1, 0, 1, 0]))


def test_adjusted_outcomes_centered_per_arm():
    rng = np.random.default_rng(0)
    d = np.tile([1, 0], 50)
    yhat = adjusted_outcomes(ObservedSample(rng.normal(size=100), np.ones(100, dtype=np.int8), d))
    assert abs(yhat[d == 1].sum()) < 1e-12 and abs(yhat[d == 0].sum()) < 1e-12


def test_adjusted_outcomes_arm_shift_invariance():
    rng = np.random.default_rng(1)
    r = (rng.random(40) < 0.8).astype(np.int8)
    d = np.tile([1, 0], 20)
    y = rng.normal(size=40) * r
    base = adjusted_outcomes(ObservedSample(y, r, d))
    shifted = adjusted_outcomes(ObservedSample(y + 3.0 * r * d, r, d))
    np.testing.assert_allclose(shifted, base, atol=1e-12)


def test_constant_outcomes_give_zero_variance():
    s = ObservedSample(np.full(8, 2.0), np.ones(8, dtype=np.int8), np.tile([1, 0], 4))
    v = mp_variance(s, PairAssignment(np.arange(8)))
    assert v.tau_sq == v.lambda_sq == v.v_sq == 0.0


def test_variance_scale_equivariance():
    rng = np.random.default_rng(2)
    r = (rng.random(40) < 0.8).astype(np.int8)
    d = np.tile([1, 0], 20)
    y = rng.normal(size=40) * r
    pa = PairAssignment(np.arange(40))
    a, b = mp_variance(ObservedSample(y, r, d), pa), mp_variance(ObservedSample(-3.0 * y, r, d), pa)
    assert (b.tau_sq, b.lambda_sq, b.v_sq) == pytest.approx((9 * a.tau_sq, 9 * a.lambda_sq, 9 * a.v_sq))


def test_ci_spec_half_width():
    ci = confidence_interval(0.0, VarianceEstimate(4.0, 0.0, 4.0, 400, False), 0.95)
    assert ci.upper == pytest.approx(0.196, abs=1e-4)


def test_ci_zero_variance_is_degenerate():
    ci = confidence_interval(1.5, VarianceEstimate(0.0, 0.0, 0.0, 10, False), 0.95)
    assert ci.lower == ci.upper == 1.5


def test_mean_variance_estimate_near_oracle(ex1):
    # n_pairs = 2000, 500 replications
    from attrition_rct.estimands import asymptotic_variance
    from attrition_rct.montecarlo import ExperimentConfig, run_replications

    res = run_replications(ExperimentConfig(ex1, n_units=4000, replications=500, master_seed=21, estimators=("dim",), oracle_draws=10**5))
    sigma = asymptotic_variance(ex1, method="quadrature").value
    assert abs(res.estimators["dim"].mean_v_sq - sigma) / sigma < 0.10


def test_no_attrition_coverage(ex1):
    from attrition_rct.montecarlo import ExperimentConfig, run_replications

    spec = ex1.replace(nu1=[1e9], nu0=[1e9])
    res = run_replications(ExperimentConfig(spec, n_units=2000, replications=1000, master_seed=22, estimators=("dim",), oracle_draws=10**5))
    assert 0.93 <= res.estimators["dim"].coverage <= 0.97

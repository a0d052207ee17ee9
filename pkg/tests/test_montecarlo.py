import math

import numpy as np
import pytest

from attrition_rct.dgp import PRESETS
from attrition_rct.errors import EstimationError, SpecificationError
from attrition_rct.montecarlo import ExperimentConfig, convergence_study, oracle_report, run_replications

from conftest import identification_specs, no_attrition

EX1 = PRESETS["appendix-ex1"]


def _cfg(**kw):
    base = dict(spec=EX1, n_units=400, replications=40, master_seed=11, oracle_draws=50_000)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(SpecificationError):
        _cfg(n_units=401)
    with pytest.raises(SpecificationError):
        _cfg(replications=0)
    with pytest.raises(SpecificationError):
        _cfg(estimators=("sfe",))
    with pytest.raises(SpecificationError):
        _cfg(design="adaptive")


def test_reproducible_across_workers(kernel):
    a = run_replications(_cfg(workers=1))
    b = run_replications(_cfg(workers=4))
    for k in a.records:
        np.testing.assert_array_equal(a.records[k], b.records[k])
    assert a.rows() == b.rows()


def test_pair_fe_matches_drop_every_replication():
    rec = run_replications(_cfg()).records
    np.testing.assert_allclose(rec["pair_fe"], rec["drop"], atol=1e-9)


def test_zero_attrition_drop_equals_dim():
    res = run_replications(_cfg(spec=no_attrition(EX1)))
    np.testing.assert_allclose(res.records["drop"], res.records["dim"], atol=1e-12)
    assert res.mean_attrition == 0.0
    assert res.broken_pair_rate == 0.0


def test_example1_means_near_estimands():
    cfg = _cfg(n_units=10_000, replications=200, master_seed=3, oracle_draws=10**6)
    res = run_replications(cfg)
    oracle = res.oracle
    for name, target in (("dim", oracle.theta_obs), ("drop", oracle.theta_drop)):
        est = res.estimators[name]
        assert abs(est.mean - target) < 3 * est.se, (name, est.mean, target, est.se)


def test_stratified_sfe_tracks_dim_when_attrition_ignores_strata():
    spec = identification_specs()["attrition_indep_x"]
    res = run_replications(_cfg(spec=spec, design="stratified", n_units=2000, replications=100))
    dim, sfe = res.records["dim"], res.records["sfe"]
    combined = math.hypot(dim.std(ddof=1), sfe.std(ddof=1)) / math.sqrt(dim.size)
    assert abs(sfe.mean() - dim.mean()) < 3 * combined
    assert 0.0 <= res.contrast_free_strata_rate <= 1.0


def test_summary_invariants():
    res = run_replications(_cfg())
    for est in res.estimators.values():
        assert est.sd >= 0
        assert est.coverage is None or 0.0 <= est.coverage <= 1.0
    assert set(res.estimators["drop"].bias) == {"theta", "theta_obs", "theta_drop"}


def test_failures_counted_then_fatal():
    # one pair; drop fails whenever the control unit attrits
    counted = run_replications(_cfg(spec=EX1.replace(nu1=[1.5], nu0=[0.5]), n_units=2, replications=200, estimators=("drop",)))
    fails = counted.estimators["drop"].failures
    assert 0 < fails < 100
    with pytest.raises(EstimationError):
        run_replications(_cfg(spec=EX1.replace(nu0=[-2.0]), n_units=2, replications=200, estimators=("drop",)))


def test_convergence_study():
    cfg = _cfg(replications=100, oracle_draws=200_000, estimators=("dim",))
    rows = convergence_study(cfg, [200, 800, 3200])
    sds = [r.estimators["dim"].sd for r in rows]
    for a, b in zip(sds, sds[1:]):
        assert 0.7 * 0.5 < b / a < 1.3 * 0.5
    biases = [abs(r.estimators["dim"].bias["theta_obs"]) for r in rows]
    assert biases[-1] < biases[0] + 3 * rows[0].estimators["dim"].se


def test_convergence_single_point():
    assert len(convergence_study(_cfg(replications=5), [100])) == 1


def test_convergence_grid_must_ascend():
    with pytest.raises(SpecificationError):
        convergence_study(_cfg(), [400, 200])


def test_oracle_seed_is_recorded():
    assert oracle_report(_cfg()).seed == oracle_report(_cfg()).seed

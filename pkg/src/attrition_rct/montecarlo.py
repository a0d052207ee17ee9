"""Replicated experiments: sample, assign, estimate, and summarize against oracle estimands."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats

from . import _kernels
from .design import (
    ObservedSample,
    StrataAssignment,
    observe,
    pair_adjacent,
    randomize_stratified_block,
    stratify_by_quantiles,
    strata_from_cutpoints,
)
from .dgp import DgpSpec, draw_sample
from .errors import EstimationError, SpecificationError
from .estimands import (
    EstimandReport,
    asymptotic_variance,
    estimand_drop,
    estimand_obs,
    estimand_sfe,
    normal_quantile_cutpoints,
    true_ate,
)
from .estimators import diff_in_means, pair_fe_coefficient, strata_fe_coefficient
from .rng import child_seed, generator

PAIR_ESTIMATORS = ("dim", "drop", "pair_fe")
STRATA_ESTIMATORS = ("dim", "sfe")
MAX_FAILURE_RATE = 0.5


@dataclass
class ExperimentConfig:
    """One Monte Carlo study.

    ``design`` is ``"matched_pairs"`` or ``"stratified"``. Stratified designs use
    ``strata`` sample-quantile bins of X, or fixed ``cutpoints`` when given.
    """

    spec: DgpSpec
    design: str = "matched_pairs"
    n_units: int = 1000
    replications: int = 200
    master_seed: int = 0
    estimators: tuple[str, ...] | None = None
    level: float = 0.95
    strata: int = 10
    cutpoints: tuple[float, ...] | None = None
    nu: float = 0.5
    oracle_draws: int = 10**6
    workers: int = 1

    def __post_init__(self):
        if self.design not in ("matched_pairs", "stratified"):
            raise SpecificationError(f"unknown design {self.design!r}")
        if self.design == "matched_pairs" and self.n_units % 2:
            raise SpecificationError("matched pairs need an even n_units")
        if self.replications < 1 or self.n_units < 2:
            raise SpecificationError("need replications >= 1 and n_units >= 2")
        if not 0.0 < self.level < 1.0:
            raise SpecificationError("level must lie in (0, 1)")
        allowed = PAIR_ESTIMATORS if self.design == "matched_pairs" else STRATA_ESTIMATORS
        if self.estimators is None:
            self.estimators = allowed
        bad = set(self.estimators) - set(allowed)
        if bad:
            raise SpecificationError(f"estimators {sorted(bad)} are not available for design {self.design!r}")
        self.estimators = tuple(self.estimators)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dgp": self.spec.to_dict(),
            "design": self.design,
            "n_units": self.n_units,
            "replications": self.replications,
            "seed": self.master_seed,
            "estimators": list(self.estimators),
            "level": self.level,
            "strata": self.strata,
            "cutpoints": None if self.cutpoints is None else list(self.cutpoints),
            "nu": self.nu,
            "oracle_draws": self.oracle_draws,
        }


@dataclass
class EstimatorSummary:
    mean: float
    sd: float
    se: float
    bias: dict[str, float]
    failures: int
    coverage: float | None = None
    mean_v_sq: float | None = None


@dataclass
class SummaryStats:
    n_units: int
    replications: int
    estimators: dict[str, EstimatorSummary]
    oracle: EstimandReport
    mean_attrition: float
    broken_pair_rate: float | None = None
    contrast_free_strata_rate: float | None = None
    records: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for name, est in self.estimators.items():
            row = {
                "n_units": self.n_units,
                "estimator": name,
                "replications": self.replications,
                "mean": est.mean,
                "sd": est.sd,
                "se": est.se,
                "failures": est.failures,
            }
            row.update({f"bias_{k}": v for k, v in est.bias.items()})
            row["coverage"] = est.coverage
            row["mean_v_sq"] = est.mean_v_sq
            row["mean_attrition"] = self.mean_attrition
            row["broken_pair_rate"] = self.broken_pair_rate
            row["contrast_free_strata_rate"] = self.contrast_free_strata_rate
            out.append(row)
        return out


def oracle_report(cfg: ExperimentConfig) -> EstimandReport:
    spec, draws, seed = cfg.spec, cfg.oracle_draws, child_seed(cfg.master_seed, 0xE57)
    obs = estimand_obs(spec, draws, seed)
    drop = estimand_drop(spec, draws, seed)
    se = {"theta_obs": obs.se, "theta_drop": drop.se}
    sfe = var = None
    if cfg.design == "stratified":
        sfe = estimand_sfe(spec, _population_cutpoints(cfg), cfg.nu, draws, seed)
        se["theta_sfe"] = sfe.se
    else:
        var = asymptotic_variance(spec, draws, seed)
        se["sigma_sq_mp"] = var.se
    return EstimandReport(
        theta=true_ate(spec),
        theta_obs=obs.value,
        theta_drop=drop.value,
        theta_sfe=None if sfe is None else sfe.value,
        sigma_sq_mp=None if var is None else var.value,
        mc_draws=draws,
        seed=seed,
        mc_se=se,
    )


def _population_cutpoints(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.cutpoints is not None:
        return np.asarray(cfg.cutpoints, dtype=float)
    if cfg.spec.covariate_law.kind != "normal":
        raise SpecificationError("quantile strata for a discrete covariate need explicit cutpoints")
    return normal_quantile_cutpoints(cfg.strata)


_PAIR_FIELDS = ("dim", "drop", "tau", "lam", "complete", "n1", "n0", "attrition")


def _pair_replication(cfg: ExperimentConfig, rep: int) -> dict[str, float]:
    seed = child_seed(cfg.master_seed, rep)
    table = draw_sample(cfg.spec, cfg.n_units, child_seed(seed, 0))
    pa = pair_adjacent(table.x)
    coin = generator(seed, 1).integers(0, 2, size=pa.n_pairs, dtype=np.int8)
    raw = _kernels.active.pair_replication(table.y1, table.y0, table.r1, table.r0, pa.first, pa.second, coin)
    rec = dict(zip(_PAIR_FIELDS, map(float, raw)))
    rec["pair_fe"] = math.nan
    if "pair_fe" in cfg.estimators and rec["complete"] > 0:
        d = np.empty(pa.n, dtype=np.int8)
        d[pa.first], d[pa.second] = coin, 1 - coin
        try:
            rec["pair_fe"] = pair_fe_coefficient(observe(table, d), pa).value
        except EstimationError:
            pass
    return rec


def _strata_replication(cfg: ExperimentConfig, rep: int) -> dict[str, float]:
    seed = child_seed(cfg.master_seed, rep)
    table = draw_sample(cfg.spec, cfg.n_units, child_seed(seed, 0))
    if cfg.cutpoints is not None:
        labels = strata_from_cutpoints(table.x, cfg.cutpoints)
        k = len(cfg.cutpoints) + 1
    else:
        labels = stratify_by_quantiles(table.x, cfg.strata)
        k = cfg.strata
    sa = StrataAssignment(labels, cfg.nu, k)
    d = randomize_stratified_block(sa, child_seed(seed, 1))
    s: ObservedSample = observe(table, d, stratum_id=labels)
    rec = {"dim": math.nan, "sfe": math.nan, "free": math.nan, "attrition": 1.0 - s.r.mean()}
    try:
        rec["dim"] = diff_in_means(s).value
    except EstimationError:
        pass
    try:
        est = strata_fe_coefficient(s, sa)
        rec["sfe"] = est.value
        rec["free"] = est.meta["contrast_free_strata"] / k
    except EstimationError:
        pass
    return rec


def _collect(cfg: ExperimentConfig) -> dict[str, np.ndarray]:
    worker = _pair_replication if cfg.design == "matched_pairs" else _strata_replication
    reps = range(cfg.replications)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            recs = list(pool.map(lambda r: worker(cfg, r), reps))
    else:
        recs = [worker(cfg, r) for r in reps]
    return {k: np.array([rec[k] for rec in recs]) for k in recs[0]}


def run_replications(cfg: ExperimentConfig, oracle: EstimandReport | None = None) -> SummaryStats:
    """Run ``cfg.replications`` independent experiments.

    Replication ``r`` draws from streams keyed by ``(master_seed, r)``;
    records are stored by index, so summaries do not depend on ``workers``.
    Failed estimates are counted per estimator; more than half failing aborts.
    """
    oracle = oracle_report(cfg) if oracle is None else oracle
    rec = _collect(cfg)
    n_pairs = cfg.n_units // 2
    z = float(stats.norm.ppf(0.5 + 0.5 * cfg.level))
    targets = {"theta": oracle.theta, "theta_obs": oracle.theta_obs}
    out: dict[str, EstimatorSummary] = {}
    for name in cfg.estimators:
        vals = rec[name]
        ok = np.isfinite(vals)
        failures = int((~ok).sum())
        if failures > MAX_FAILURE_RATE * cfg.replications:
            raise EstimationError(f"{name}: {failures} of {cfg.replications} replications failed")
        good = vals[ok]
        mean = float(good.mean())
        sd = float(good.std(ddof=1)) if good.size > 1 else 0.0
        own = {"drop": "theta_drop", "pair_fe": "theta_drop", "sfe": "theta_sfe"}.get(name)
        tgt = dict(targets)
        if own is not None:
            tgt[own] = getattr(oracle, own)
        bias = {k: mean - v for k, v in tgt.items() if v is not None}
        summary = EstimatorSummary(mean, sd, sd / math.sqrt(max(good.size, 1)), bias, failures)
        if name == "dim" and cfg.design == "matched_pairs":
            v_sq = rec["tau"] / n_pairs - rec["lam"] / n_pairs
            half = z * np.sqrt(np.maximum(v_sq, 0.0) / n_pairs)
            hit = np.abs(vals - oracle.theta_obs) <= half
            summary.coverage = float(hit[ok].mean())
            summary.mean_v_sq = float(np.nanmean(v_sq[ok]))
        out[name] = summary
    stats_ = SummaryStats(cfg.n_units, cfg.replications, out, oracle, float(np.mean(rec["attrition"])), records=rec)
    if cfg.design == "matched_pairs":
        # observed units = 2 * complete pairs + broken pairs
        broken = rec["n1"] + rec["n0"] - 2.0 * rec["complete"]
        stats_.broken_pair_rate = float(np.mean(broken / n_pairs))
    else:
        stats_.contrast_free_strata_rate = float(np.nanmean(rec["free"]))
    return stats_


def convergence_study(cfg: ExperimentConfig, n_grid) -> list[SummaryStats]:
    """One :func:`run_replications` per sample size, sharing the master seed and oracle."""
    n_grid = [int(n) for n in n_grid]
    if not n_grid or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise SpecificationError("n_grid must be non-empty and strictly ascending")
    oracle = oracle_report(cfg)
    rows = []
    for n in n_grid:
        sub = ExperimentConfig(**{**cfg.__dict__, "n_units": n})
        rows.append(run_replications(sub, oracle))
    return rows

"""Estimands, estimators and Monte Carlo checks for matched-pair and stratified
randomized experiments with attrition."""

from .design import (
    ObservedSample,
    PairAssignment,
    StrataAssignment,
    observe,
    pair_adjacent,
    randomize_stratified_block,
    randomize_within_pairs,
    stratify_by_quantiles,
)
from .dgp import PRESETS, CovariateLaw, DgpSpec, PotentialTable, conditional_moments, draw_sample
from .estimands import (
    EstimandReport,
    asymptotic_variance,
    estimand_drop,
    estimand_obs,
    estimand_sfe,
    lambda_weight,
    remark3_decompositions,
    rho_weight,
    true_ate,
)
from .estimators import (
    Estimate,
    diff_in_means,
    ols_solve,
    pair_fe_coefficient,
    strata_fe_coefficient,
    theta_drop,
)
from .inference import adjusted_outcomes, confidence_interval, mp_variance
from .montecarlo import ExperimentConfig, SummaryStats, convergence_study, run_replications
from .reanalysis import DualEstimate, TrialDataset, attrition_rate, dual_estimates, load_csv, pct_diffs

__version__ = "0.1.0"

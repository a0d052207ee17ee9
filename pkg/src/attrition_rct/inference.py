"""Adjusted-outcome variance estimator and normal confidence intervals for matched pairs.

All ``1/n`` normalizations use ``n_pairs``, the number of pairs; the estimator
``diff_in_means`` then satisfies ``sqrt(n_pairs) (theta_hat - theta_obs) -> N(0, v^2)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _kernels
from .design import ObservedSample, PairAssignment
from .errors import EstimationError
from .estimators import Estimate


@dataclass
class VarianceEstimate:
    tau_sq: float
    lambda_sq: float
    v_sq: float
    n_pairs: int
    floored: bool = False

    @property
    def v_sq_floored(self) -> float:
        return max(self.v_sq, 0.0)


@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    center: float

    def __contains__(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)


def adjusted_outcomes(s: ObservedSample, n_pairs: int | None = None) -> np.ndarray:
    """``Yhat_i = R_i / p_hat(D_i) * (Y_i - mean of observed Y in arm D_i)``.

    ``p_hat(d) = (1/n_pairs) * #{j: R_j = 1, D_j = d}``.
    """
    n_pairs = len(s) // 2 if n_pairs is None else int(n_pairs)
    n1, s1, n0, s0 = _kernels.active.arm_sums(s.y, s.r, s.d)
    if n1 == 0 or n0 == 0:
        raise EstimationError("arm exhausted by attrition")
    treated = s.d == 1
    center = np.where(treated, s1 / n1, s0 / n0)
    scale = np.where(treated, n_pairs / n1, n_pairs / n0)
    return s.r * scale * (s.y - center)


def mp_variance(s: ObservedSample, pa: PairAssignment) -> VarianceEstimate:
    """``v^2 = tau^2 - lambda^2 / 2`` from adjacent pairs and adjacent pairs of pairs.

    Pairs must be in the covariate order produced by ``pair_adjacent``; a
    trailing odd pair is ignored in ``lambda^2``.
    """
    if pa.n != len(s):
        raise EstimationError("pair assignment does not match sample size")
    if pa.n_pairs < 2:
        raise EstimationError("variance estimator needs at least two pairs")
    yhat = adjusted_outcomes(s, pa.n_pairs)
    tau, lam = _kernels.active.mp_variance_sums(yhat, s.d, pa.first, pa.second)
    tau_sq = tau / pa.n_pairs
    lambda_sq = 2.0 * lam / pa.n_pairs
    v_sq = tau_sq - 0.5 * lambda_sq
    return VarianceEstimate(tau_sq, lambda_sq, v_sq, pa.n_pairs, floored=v_sq < 0.0)


def confidence_interval(theta_hat: Estimate | float, v: VarianceEstimate, level: float = 0.95) -> ConfidenceInterval:
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if v.n_pairs < 2:
        raise EstimationError("variance estimator needs at least two pairs")
    if v.v_sq < 0.0:
        warnings.warn("negative variance estimate floored at 0", RuntimeWarning, stacklevel=2)
    center = float(theta_hat)
    half = float(stats.norm.ppf(0.5 + 0.5 * level)) * math.sqrt(v.v_sq_floored / v.n_pairs)
    return ConfidenceInterval(center - half, center + half, level, center)

"""Point estimators on an observed sample.

``diff_in_means`` uses all non-attritors. ``theta_drop`` keeps only pairs whose
two units are both observed. ``pair_fe_coefficient`` and
``strata_fe_coefficient`` are least-squares coefficients on treatment with
group indicators. By Frisch-Waugh-Lovell, the pair-FE coefficient equals
``theta_drop``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .design import ObservedSample, PairAssignment, StrataAssignment
from .errors import EstimationError

# Above this many groups, fixed effects are absorbed by within-group demeaning
# rather than materialized as indicator columns.
DENSE_FE_LIMIT = 300


@dataclass
class Estimate:
    value: float
    n_used: int
    arm_counts: tuple[int, int]
    meta: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value)


def diff_in_means(s: ObservedSample) -> Estimate:
    n1, s1, n0, s0 = _kernels.active.arm_sums(s.y, s.r, s.d)
    if n1 == 0 or n0 == 0:
        raise EstimationError("arm exhausted by attrition")
    return Estimate(s1 / n1 - s0 / n0, int(n1 + n0), (int(n1), int(n0)))


def theta_drop(s: ObservedSample, pa: PairAssignment) -> Estimate:
    """Mean within-pair treated-minus-control gap over fully observed pairs."""
    if pa.n != len(s):
        raise EstimationError("pair assignment does not match sample size")
    cnt, tot = _kernels.active.drop_sums(s.y, s.r, s.d, pa.first, pa.second)
    if cnt == 0:
        raise EstimationError("all pairs broken")
    complete = pa.pairs[(s.r[pa.first] == 1) & (s.r[pa.second] == 1)].ravel()
    n1 = int(s.d[complete].sum())
    return Estimate(
        tot / cnt,
        int(2 * cnt),
        (n1, int(2 * cnt) - n1),
        {"complete_pairs": int(cnt), "broken_pairs": int(np.sum(s.r[pa.first] != s.r[pa.second]))},
    )


# least squares ---------------------------------------------------------------


def independent_columns(X: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent column subset, scanning left to right.

    A column is dropped when its residual after projecting on the kept columns
    is below ``tol`` relative to its own norm (or it is all zeros).
    """
    X = np.asarray(X, dtype=float)
    keep: list[int] = []
    basis = np.empty((X.shape[0], 0))
    for j in range(X.shape[1]):
        col = X[:, j]
        norm = np.linalg.norm(col)
        if norm == 0.0:
            continue
        resid = col - basis @ (basis.T @ col)
        resid -= basis @ (basis.T @ resid)
        rn = np.linalg.norm(resid)
        if rn > tol * norm:
            keep.append(j)
            basis = np.column_stack([basis, resid / rn])
    return np.asarray(keep, dtype=np.int64)


def ols_solve(X, y) -> np.ndarray:
    """Least-squares coefficients via Householder QR.

    Exactly collinear columns are dropped (first occurrence kept) and reported
    as NaN in the returned vector.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise EstimationError("no usable rows for least squares")
    if X.shape[0] != y.size:
        raise EstimationError("design and response lengths differ")
    keep = independent_columns(X)
    if keep.size == 0:
        raise EstimationError("design matrix has no non-zero columns")
    if keep.size > X.shape[0]:
        raise EstimationError("more columns than rows after dropping collinear columns")
    q, r = np.linalg.qr(X[:, keep])
    beta = np.full(X.shape[1], np.nan)
    beta[keep] = np.linalg.solve(r, q.T @ y) if r.shape[0] == r.shape[1] else np.linalg.lstsq(r, q.T @ y, rcond=None)[0]
    return beta


def group_indicators(groups) -> np.ndarray:
    _, inv = np.unique(groups, return_inverse=True)
    out = np.zeros((inv.size, inv.max() + 1))
    out[np.arange(inv.size), inv] = 1.0
    return out


def demean_within(M, groups) -> np.ndarray:
    """Subtract group means column by column (absorbs group fixed effects)."""
    M = np.asarray(M, dtype=float)
    _, inv = np.unique(groups, return_inverse=True)
    cnt = np.bincount(inv).astype(float)
    flat = M.reshape(M.shape[0], -1)
    out = np.empty_like(flat)
    for j in range(flat.shape[1]):
        out[:, j] = flat[:, j] - (np.bincount(inv, weights=flat[:, j]) / cnt)[inv]
    return out.reshape(M.shape)


def fe_coefficients(y, X, groups, dense: bool | None = None) -> np.ndarray:
    """Coefficients on ``X`` from OLS of ``y`` on ``X`` plus group indicators."""
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    n_groups = np.unique(groups).size
    if dense is None:
        dense = n_groups <= DENSE_FE_LIMIT
    if dense:
        # Indicators go first so a treatment column spanned by them is the one dropped.
        beta = ols_solve(np.column_stack([group_indicators(groups), X]), y)
        return beta[n_groups:]
    return ols_solve(demean_within(X, groups), demean_within(np.asarray(y, float), groups))


def pair_fe_coefficient(s: ObservedSample, pa: PairAssignment, dense: bool | None = None) -> Estimate:
    """Coefficient on D from regressing Y on D and pair indicators over non-attritors."""
    if pa.n != len(s):
        raise EstimationError("pair assignment does not match sample size")
    obs = s.r == 1
    if not obs.any():
        raise EstimationError("every unit attrited")
    pid = pa.pair_ids()[obs]
    d = s.d[obs].astype(float)
    beta = fe_coefficients(s.y[obs], d, pid, dense=dense)
    if not np.isfinite(beta[0]):
        raise EstimationError("all pairs broken: treatment collinear with pair effects")
    n1 = int(d.sum())
    return Estimate(float(beta[0]), int(obs.sum()), (n1, int(obs.sum()) - n1))


@dataclass
class OlsProjection:
    """Treatment residualized on stratum indicators among non-attritors."""

    d_tilde: np.ndarray
    n1: np.ndarray
    n: np.ndarray


def strata_projection(s: ObservedSample, sa: StrataAssignment) -> OlsProjection:
    w = s.r.astype(float)
    n_s = np.bincount(sa.labels, weights=w, minlength=sa.n_strata)
    n1_s = np.bincount(sa.labels, weights=w * s.d, minlength=sa.n_strata)
    share = np.divide(n1_s, n_s, out=np.zeros(sa.n_strata), where=n_s > 0)
    return OlsProjection((s.d - share[sa.labels]) * w, n1_s, n_s)


def strata_fe_coefficient(s: ObservedSample, sa: StrataAssignment) -> Estimate:
    """``sum R D~ Y / sum R D~^2`` with ``D~`` the within-stratum residualized treatment."""
    if sa.labels.size != len(s):
        raise EstimationError("strata assignment does not match sample size")
    num, den, free = _kernels.active.strata_fe_sums(s.y, s.r, s.d, sa.labels, sa.n_strata)
    if den <= 0.0:
        raise EstimationError("no within-stratum contrast")
    n1, _, n0, _ = _kernels.active.arm_sums(s.y, s.r, s.d)
    return Estimate(num / den, int(n1 + n0), (int(n1), int(n0)), {"contrast_free_strata": int(free)})

"""Re-analysis of trial data files: estimates with and without group fixed effects.

A blank outcome cell marks an attrited unit. The group column may hold pair
ids or stratum labels; the fixed-effects regression is the same either way.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EstimationError, IngestionError
from .estimators import fe_coefficients, ols_solve


@dataclass
class TrialDataset:
    outcome: np.ndarray  # NaN where attrited
    treated: np.ndarray
    group: np.ndarray
    covariates: np.ndarray  # (n, k), k may be 0
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.outcome.size
        if n < 2:
            raise IngestionError("dataset needs at least 2 rows")
        if self.treated.size != n or self.group.size != n or self.covariates.shape[0] != n:
            raise IngestionError("column lengths differ")
        if np.any((self.treated != 0) & (self.treated != 1)):
            raise IngestionError("treated must be 0 or 1")
        if any(g == "" for g in self.group):
            raise IngestionError("group ids must be non-empty")

    def __len__(self) -> int:
        return self.outcome.size

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.outcome)


@dataclass
class DualEstimate:
    original: float
    alternative: float
    abs_pct_diff: float
    signed_pct_change: float
    attrition_rate: float


def _parse_float(text: str, where: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise IngestionError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(val):
        raise IngestionError(f"{where}: non-finite value {text!r}")
    return val


def load_csv(
    path: str | Path,
    outcome: str = "outcome",
    treated: str = "treated",
    group: str = "group",
    covariates: Sequence[str] = (),
) -> TrialDataset:
    """Read a trial file; columns are selected by header name."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"{path}: {exc.strerror}") from None
    with fh:
        rows = [row for row in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    dup = sorted({h for h in header if header.count(h) > 1})
    if dup:
        raise IngestionError(f"{path}: duplicate header column(s) {dup}")
    col = {}
    for name in (outcome, treated, group, *covariates):
        if name not in header:
            raise IngestionError(f"{path}: missing column {name!r}")
        col[name] = header.index(name)
    body = rows[1:]
    if len(body) < 2:
        raise IngestionError(f"{path}: need at least 2 data rows, found {len(body)}")
    y = np.empty(len(body))
    d = np.empty(len(body), dtype=np.int8)
    g = np.empty(len(body), dtype=object)
    cov = np.empty((len(body), len(covariates)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise IngestionError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
        cell = row[col[outcome]].strip()
        y[i] = np.nan if cell == "" else _parse_float(cell, f"{path}:{line}: column {outcome!r}")
        t = row[col[treated]].strip()
        if t not in ("0", "1"):
            raise IngestionError(f"{path}:{line}: column {treated!r} must be 0 or 1, got {t!r}")
        d[i] = int(t)
        g[i] = row[col[group]].strip()
        if g[i] == "":
            raise IngestionError(f"{path}:{line}: empty group id")
        for k, name in enumerate(covariates):
            cov[i, k] = _parse_float(row[col[name]].strip(), f"{path}:{line}: column {name!r}")
    return TrialDataset(y, d, g.astype(str), cov, tuple(covariates))


def attrition_rate(ds: TrialDataset) -> float:
    """Share of rows with a missing outcome."""
    return float(np.mean(~ds.observed))


def pct_diffs(original: float, alternative: float) -> tuple[float, float]:
    """``(|o - a| / |o| * 100, (|a| - |o|) / |o| * 100)``."""
    if original == 0:
        raise EstimationError("percentage differences are undefined when the original estimate is 0")
    base = abs(original)
    return float(abs(original - alternative) / base * 100.0), float((abs(alternative) - base) / base * 100.0)


def dual_estimates(ds: TrialDataset, use_covariates: bool = False) -> DualEstimate:
    """Treatment coefficient with group indicators (original) and with an intercept only (alternative)."""
    obs = ds.observed
    d = ds.treated[obs].astype(float)
    if d.size == 0 or d.min() == d.max():
        raise EstimationError("arm exhausted by attrition")
    y = ds.outcome[obs]
    extra = ds.covariates[obs] if use_covariates else np.empty((d.size, 0))
    X = np.column_stack([d, extra])
    original = fe_coefficients(y, X, ds.group[obs])[0]
    if not np.isfinite(original):
        raise EstimationError("treatment is collinear with the group fixed effects")
    alternative = ols_solve(np.column_stack([np.ones(d.size), X]), y)[1]
    if not np.isfinite(alternative):
        raise EstimationError("treatment is collinear with the covariates")
    abs_pct, signed = pct_diffs(original, alternative)
    return DualEstimate(float(original), float(alternative), abs_pct, signed, attrition_rate(ds))


def write_csv(ds: TrialDataset, path: str | Path, outcome="outcome", treated="treated", group="group") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([outcome, treated, group, *ds.covariate_names])
        for i in range(len(ds)):
            y = "" if np.isnan(ds.outcome[i]) else repr(float(ds.outcome[i]))
            w.writerow([y, int(ds.treated[i]), ds.group[i], *(repr(float(v)) for v in ds.covariates[i])])

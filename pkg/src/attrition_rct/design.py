"""Treatment assignment: matched pairs, stratified permuted blocks, and the observed sample."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dgp import PotentialTable
from .errors import DesignError
from .rng import SeedLike, generator


@dataclass(frozen=True)
class PairAssignment:
    """Adjacent-pair matching.

    ``pi`` is the 0-based sort permutation; pair ``j`` is ``(first[j], second[j])``
    = ``(pi[2j], pi[2j+1])``. Pairs are listed in ascending covariate order.
    """

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.int64)
        if pi.size % 2:
            raise DesignError(f"matched pairs need an even number of units, got {pi.size}")
        if not np.array_equal(np.sort(pi), np.arange(pi.size)):
            raise DesignError("pi is not a permutation of 0..n-1")
        object.__setattr__(self, "pi", pi)

    @property
    def n(self) -> int:
        return self.pi.size

    @property
    def n_pairs(self) -> int:
        return self.pi.size // 2

    @property
    def first(self) -> np.ndarray:
        return self.pi[0::2]

    @property
    def second(self) -> np.ndarray:
        return self.pi[1::2]

    @property
    def pairs(self) -> np.ndarray:
        """``(n_pairs, 2)`` array of unit indices."""
        return self.pi.reshape(-1, 2)

    def pair_ids(self) -> np.ndarray:
        """Pair index of every unit."""
        ids = np.empty(self.n, dtype=np.int64)
        ids[self.pi] = np.arange(self.n) // 2
        return ids


@dataclass(frozen=True)
class StrataAssignment:
    """Stratum labels ``0..n_strata-1`` and the target treated share ``nu``."""

    labels: np.ndarray
    nu: float = 0.5
    n_strata: int | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size == 0:
            raise DesignError("stratum labels must be a non-empty vector")
        if labels.min() < 0:
            raise DesignError("stratum labels must be non-negative integers")
        if not 0.0 < self.nu < 1.0:
            raise DesignError(f"target proportion nu must lie in (0, 1), got {self.nu}")
        k = int(labels.max()) + 1 if self.n_strata is None else int(self.n_strata)
        if labels.max() >= k:
            raise DesignError("stratum label outside 0..n_strata-1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_strata", k)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_strata)

    def imbalance(self, d) -> np.ndarray:
        """``D_n(s) = sum_{i in s} (d_i - nu)`` per stratum."""
        d = np.asarray(d, dtype=float)
        return np.bincount(self.labels, weights=d - self.nu, minlength=self.n_strata)


@dataclass
class ObservedSample:
    """Analyst view after randomization and attrition. ``y`` is 0 where ``r`` is 0."""

    y: np.ndarray
    r: np.ndarray
    d: np.ndarray
    pair_id: np.ndarray | None = None
    stratum_id: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.r = np.asarray(self.r, dtype=np.int8)
        self.d = np.asarray(self.d, dtype=np.int8)
        if not (self.y.shape == self.r.shape == self.d.shape):
            raise DesignError("y, r and d must have equal length")
        if np.any((self.r != 0) & (self.r != 1)) or np.any((self.d != 0) & (self.d != 1)):
            raise DesignError("r and d must be 0/1")
        if np.any(self.y[self.r == 0] != 0.0):
            raise DesignError("attrited units must carry y = 0")

    def __len__(self) -> int:
        return self.y.size

    def take(self, idx) -> "ObservedSample":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return ObservedSample(self.y[idx], self.r[idx], self.d[idx], pick(self.pair_id), pick(self.stratum_id))


def pair_adjacent(x) -> PairAssignment:
    """Sort by covariate (ties by index) and pair positions (0,1), (2,3), ..."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DesignError("pairing needs a scalar covariate vector")
    if x.size % 2:
        raise DesignError(f"matched pairs need an even number of units, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DesignError("covariates must be finite")
    return PairAssignment(np.argsort(x, kind="stable"))


def randomize_within_pairs(pa: PairAssignment, seed: SeedLike) -> np.ndarray:
    coin = generator(seed).integers(0, 2, size=pa.n_pairs, dtype=np.int8)
    d = np.empty(pa.n, dtype=np.int8)
    d[pa.first] = coin
    d[pa.second] = 1 - coin
    return d


def randomize_stratified_block(sa: StrataAssignment, seed: SeedLike) -> np.ndarray:
    """Permuted-block assignment.

    Stratum ``s`` treats ``floor(nu n(s))`` units plus one more with probability
    ``frac(nu n(s))``, so ``|D_n(s)| < 1`` always.
    """
    counts = sa.counts()
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise DesignError(f"empty strata: {empty}")
    rng = generator(seed)
    keys = rng.random(sa.labels.size)
    extra = rng.random(sa.n_strata)
    return _kernels.active.block_assign(sa.labels, keys, extra, float(sa.nu), sa.n_strata)


def stratify_by_quantiles(x, k: int) -> np.ndarray:
    """Empirical-quantile bins ``0..k-1``; bin ``b`` is ``(q_b, q_{b+1}]`` (first bin closed below)."""
    x = np.asarray(x, dtype=float)
    k = int(k)
    if k < 1:
        raise DesignError(f"number of strata must be positive, got {k}")
    if k > x.size:
        raise DesignError(f"cannot form {k} strata from {x.size} units")
    cuts = np.quantile(x, np.arange(1, k) / k)
    return np.searchsorted(cuts, x, side="left").astype(np.int64)


def strata_from_cutpoints(x, cutpoints) -> np.ndarray:
    """Label by fixed cutpoints with the same half-open convention as :func:`stratify_by_quantiles`."""
    return np.searchsorted(np.asarray(cutpoints, dtype=float), np.asarray(x, dtype=float), side="left").astype(np.int64)


def observe(table: PotentialTable, d, pair_id=None, stratum_id=None) -> ObservedSample:
    """Apply the switching equations: ``R = R(D)``, ``Y = Y(D) R(D)``."""
    d = np.asarray(d, dtype=np.int8)
    if d.size != len(table):
        raise DesignError("assignment length does not match table")
    r = np.where(d == 1, table.r1, table.r0).astype(np.int8)
    y = np.where(d == 1, table.y1, table.y0) * r
    return ObservedSample(y, r, d, pair_id, stratum_id)

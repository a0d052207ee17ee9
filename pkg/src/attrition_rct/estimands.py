"""Population quantities: the ATE, the probability limits of the three estimators,
their CATE weights, and the asymptotic variance of the difference in means
under matched pairs.

Expectations over X are taken in one of three ways (``method``):

``"mc"``
    average over ``draws`` covariate draws of closed-form conditional moments
    (Monte Carlo standard errors reported);
``"quadrature"``
    Gauss-Hermite quadrature for a normal covariate, exact sums for a finite
    one (standard error 0);
``"latent"`` / ``"nested"``
    simulation of the full latent tuple, unconditionally or per covariate draw.
    These do not use the closed-form moments and serve as independent checks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .design import strata_from_cutpoints
from .dgp import DgpSpec, conditional_moments, draw_sample, hermite_nodes
from .errors import CapabilityError, EstimandUndefinedError
from .rng import SeedLike, generator

DEFAULT_DRAWS = 10**6
_BATCHES = 20


@dataclass(frozen=True)
class MCValue:
    """A Monte Carlo estimate with its standard error (0 for exact evaluations)."""

    value: float
    se: float = 0.0

    def __float__(self) -> float:
        return float(self.value)

    def __format__(self, spec: str) -> str:
        return format(self.value, spec)


@dataclass
class _Nodes:
    x: np.ndarray
    w: np.ndarray
    is_mc: bool


def _nodes(spec: DgpSpec, method: str, draws: int, seed: SeedLike) -> _Nodes:
    law = spec.covariate_law
    if method == "quadrature" or (method == "mc" and law.is_finite):
        if law.is_finite:
            x, w = law.support()
        else:
            x, w = hermite_nodes()
        return _Nodes(x, w, False)
    if method == "mc":
        x = law.sample(generator(seed, 0), int(draws))
        return _Nodes(x, np.full(x.size, 1.0 / x.size), True)
    raise ValueError(f"unknown integration method {method!r}")


def _ratio(num: np.ndarray, den: np.ndarray, nodes: _Nodes, what: str) -> MCValue:
    """``E[num] / E[den]`` with a delta-method standard error."""
    top, bottom = float(nodes.w @ num), float(nodes.w @ den)
    if bottom <= 0.0:
        raise EstimandUndefinedError(f"{what}: zero denominator")
    value = top / bottom
    if not nodes.is_mc:
        return MCValue(value)
    infl = (num - value * den) / bottom
    return MCValue(value, float(infl.std(ddof=1) / math.sqrt(infl.size)))


def _ratio_diff(a1, b1, a0, b0, nodes: _Nodes, what: str) -> MCValue:
    """``E[a1]/E[b1] - E[a0]/E[b0]`` with a delta-method standard error."""
    B1, B0 = float(nodes.w @ b1), float(nodes.w @ b0)
    if B1 <= 0.0 or B0 <= 0.0:
        raise EstimandUndefinedError(f"{what}: zero survival mass")
    t1, t0 = float(nodes.w @ a1) / B1, float(nodes.w @ a0) / B0
    if not nodes.is_mc:
        return MCValue(t1 - t0)
    infl = (a1 - t1 * b1) / B1 - (a0 - t0 * b0) / B0
    return MCValue(t1 - t0, float(infl.std(ddof=1) / math.sqrt(infl.size)))


def _batched(fn: Callable[[np.ndarray, np.ndarray], float], nodes: _Nodes) -> MCValue:
    """Value on all nodes; standard error from batch means for Monte Carlo nodes."""
    value = fn(nodes.x, nodes.w / nodes.w.sum())
    if not nodes.is_mc:
        return MCValue(value)
    parts = [fn(xb, np.full(xb.size, 1.0 / xb.size)) for xb in np.array_split(nodes.x, _BATCHES)]
    return MCValue(value, float(np.std(parts, ddof=1) / math.sqrt(_BATCHES)))


# average treatment effects ---------------------------------------------------


def true_ate(spec: DgpSpec) -> float:
    """``E[mu_1(X) - mu_0(X)]`` from the covariate moments."""
    law = spec.covariate_law
    if law.kind not in ("normal", "bernoulli", "grid"):
        raise CapabilityError(f"no moment formulas for covariate law {law.kind!r}")
    size = max(len(spec.mu1), len(spec.mu0))
    diff = np.zeros(size)
    diff[: len(spec.mu1)] += spec.mu1
    diff[: len(spec.mu0)] -= spec.mu0
    return float(sum(c * law.moment(k) for k, c in enumerate(diff) if c != 0.0))


def cate(spec: DgpSpec, x) -> np.ndarray:
    """``tau(x) = mu_1(x) - mu_0(x)``."""
    return spec.mu(1, x) - spec.mu(0, x)


# probability limits ----------------------------------------------------------


def estimand_obs(spec: DgpSpec, draws: int = DEFAULT_DRAWS, seed: SeedLike = 0, method: str = "latent") -> MCValue:
    """``E[R(1)Y(1)]/E[R(1)] - E[R(0)Y(0)]/E[R(0)]``.

    The default ``"latent"`` method averages simulated ``(Y(d), R(d))`` directly.
    """
    if method == "latent":
        t = draw_sample(spec, draws, seed)
        r1, r0 = t.r1.astype(float), t.r0.astype(float)
        nodes = _Nodes(t.x, np.full(t.x.size, 1.0 / t.x.size), True)
        return _ratio_diff(r1 * t.y1, r1, r0 * t.y0, r0, nodes, "theta_obs")
    nodes = _nodes(spec, method, draws, seed)
    p1, m1, _ = conditional_moments(spec, nodes.x, 1)
    p0, m0, _ = conditional_moments(spec, nodes.x, 0)
    return _ratio_diff(m1, p1, m0, p0, nodes, "theta_obs")


def estimand_drop(
    spec: DgpSpec,
    draws: int = DEFAULT_DRAWS,
    seed: SeedLike = 0,
    method: str = "mc",
    inner: int = 200,
) -> MCValue:
    """``(E[m1_1(X) p_0(X)] - E[m1_0(X) p_1(X)]) / E[p_1(X) p_0(X)]``

    with ``p_d(x) = E[R(d)|x]`` and ``m1_d(x) = E[Y(d)R(d)|x]``. ``method="nested"``
    replaces the closed-form moments by ``inner`` conditional draws per covariate
    draw (``draws // inner`` covariate draws).
    """
    if method == "nested":
        return _estimand_drop_nested(spec, draws, seed, inner)
    nodes = _nodes(spec, method, draws, seed)
    p1, m1, _ = conditional_moments(spec, nodes.x, 1)
    p0, m0, _ = conditional_moments(spec, nodes.x, 0)
    return _ratio(m1 * p0 - m0 * p1, p1 * p0, nodes, "theta_drop")


def _conditional_sim(spec: DgpSpec, x: np.ndarray, inner: int, rng: np.random.Generator):
    """Per-row Monte Carlo estimates of ``(p_d, m1_d, m2_d)`` for both arms.

    Arm 1 and arm 0 use disjoint error draws so products of the two arms'
    estimates are conditionally unbiased.
    """
    root = spec.sqrt_cov()
    out = {}
    for d, (iy, ir) in ((1, (0, 2)), (0, (1, 3))):
        eps = rng.standard_normal((x.size, inner, 4)) @ root
        y = spec.mu(d, x)[:, None] + eps[:, :, iy]
        r = eps[:, :, ir] <= spec.nu(d, x)[:, None]
        out[d] = (r.mean(axis=1), (y * r).mean(axis=1), (y * y * r).mean(axis=1))
    return out


def _estimand_drop_nested(spec: DgpSpec, draws: int, seed: SeedLike, inner: int) -> MCValue:
    outer = max(int(draws) // inner, 2)
    rng = generator(seed, 1)
    x = spec.covariate_law.sample(generator(seed, 0), outer)
    sim = _conditional_sim(spec, x, inner, rng)
    (p1, m1, _), (p0, m0, _) = sim[1], sim[0]
    return _ratio(m1 * p0 - m0 * p1, p1 * p0, _Nodes(x, np.full(outer, 1.0 / outer), True), "theta_drop")


def normal_quantile_cutpoints(k: int) -> np.ndarray:
    """Population ``k``-quantile cutpoints of N(0, 1)."""
    return stats.norm.ppf(np.arange(1, k) / k)


def _strata_means(spec: DgpSpec, x, w, cutpoints, n_strata):
    labels = strata_from_cutpoints(x, cutpoints)
    p1, m1, _ = conditional_moments(spec, x, 1)
    p0, m0, _ = conditional_moments(spec, x, 0)
    ps = np.bincount(labels, weights=w, minlength=n_strata)
    if np.any(ps <= 0.0):
        raise EstimandUndefinedError("a stratum has zero probability mass")

    def cond(v):
        return np.bincount(labels, weights=w * v, minlength=n_strata) / ps

    return ps, cond(p1), cond(p0), cond(m1), cond(m0)


def _sfe_parts(spec, x, w, cutpoints, nu):
    n_strata = len(cutpoints) + 1
    ps, b1, b0, a1, a0 = _strata_means(spec, x, w, cutpoints, n_strata)
    den = nu * b1 + (1.0 - nu) * b0
    if np.any(den <= 0.0):
        raise EstimandUndefinedError("a stratum has zero survival in both arms")
    return ps, b1 * b0 / den, (a1 * b0 - a0 * b1) / den


def estimand_sfe(
    spec: DgpSpec,
    cutpoints,
    nu: float = 0.5,
    draws: int = DEFAULT_DRAWS,
    seed: SeedLike = 0,
    method: str = "mc",
) -> MCValue:
    """Strata fixed-effects estimand for strata ``S(x)`` defined by ``cutpoints``.

    Per-stratum moments ``E[R(d)|S]`` and ``E[Y(d)R(d)|S]`` enter the weighted
    ratio with per-stratum weight ``1 / (nu E[R(1)|S] + (1 - nu) E[R(0)|S])``.
    """
    cutpoints = np.atleast_1d(np.asarray(cutpoints, dtype=float))
    nodes = _nodes(spec, method, draws, seed)

    def value(x, w):
        ps, wt, num = _sfe_parts(spec, x, w, cutpoints, nu)
        lam = float(ps @ wt)
        if lam <= 0.0:
            raise EstimandUndefinedError("theta_sfe: zero normalizer")
        return float(ps @ num) / lam

    return _batched(value, nodes)


# weights ---------------------------------------------------------------------


def rho_weight(spec: DgpSpec, x, draws: int = DEFAULT_DRAWS, seed: SeedLike = 0, method: str = "mc") -> np.ndarray:
    """``rho(x) = p_0(x) p_1(x) / E[p_0(X) p_1(X)]``."""
    nodes = _nodes(spec, method, draws, seed)
    norm = float(nodes.w @ (conditional_moments(spec, nodes.x, 0)[0] * conditional_moments(spec, nodes.x, 1)[0]))
    if norm <= 0.0:
        raise EstimandUndefinedError("rho: zero normalizer")
    return conditional_moments(spec, x, 0)[0] * conditional_moments(spec, x, 1)[0] / norm


@dataclass
class StrataWeights:
    prob: np.ndarray
    weight: np.ndarray
    normalizer: float
    cate: np.ndarray


def strata_weights(
    spec: DgpSpec,
    cutpoints,
    nu: float = 0.5,
    draws: int = DEFAULT_DRAWS,
    seed: SeedLike = 0,
    method: str = "mc",
) -> StrataWeights:
    """``p(s)``, ``lambda(s)``, the normalizer ``Lambda`` and ``tau(s)`` for every stratum."""
    cutpoints = np.atleast_1d(np.asarray(cutpoints, dtype=float))
    nodes = _nodes(spec, method, draws, seed)
    ps, wt, _ = _sfe_parts(spec, nodes.x, nodes.w, cutpoints, nu)
    lam = float(ps @ wt)
    if lam <= 0.0:
        raise EstimandUndefinedError("lambda: zero normalizer")
    labels = strata_from_cutpoints(nodes.x, cutpoints)
    tau_s = np.bincount(labels, weights=nodes.w * cate(spec, nodes.x), minlength=ps.size) / ps
    return StrataWeights(ps, wt / lam, lam, tau_s)


def lambda_weight(spec: DgpSpec, s: int, cutpoints, nu: float = 0.5, draws: int = DEFAULT_DRAWS, seed: SeedLike = 0, method: str = "mc") -> float:
    return float(strata_weights(spec, cutpoints, nu, draws, seed, method).weight[s])


# asymptotic variance -----------------------------------------------------------


def _variance_from_moments(mom1, mom0, w) -> float:
    """``var[Yt(1)] + var[Yt(0)] - E[E[Yt(1) + Yt(0) | X]^2] / 2``."""
    total = 0.0
    g = np.zeros(w.size)
    for p, m1, m2 in (mom1, mom0):
        pbar, e1, e2 = float(w @ p), float(w @ m1), float(w @ m2)
        if pbar <= 0.0:
            raise EstimandUndefinedError("asymptotic variance: zero survival mass")
        total += (e2 - e1 * e1 / pbar) / pbar**2
        g += (m1 - (e1 / pbar) * p) / pbar
    return total - 0.5 * float(w @ (g * g))


def asymptotic_variance(
    spec: DgpSpec,
    draws: int = DEFAULT_DRAWS,
    seed: SeedLike = 0,
    method: str = "mc",
    inner: int = 200,
) -> MCValue:
    """Asymptotic variance of ``sqrt(n_pairs) (theta_hat - theta_obs)`` under matched pairs.

    ``Yt(d) = R(d)/E[R(d)] * (Y(d) - E[Y(d)R(d)]/E[R(d)])``.
    """
    if not isinstance(spec, DgpSpec):
        raise CapabilityError("asymptotic variance requires the Gaussian-threshold family")
    if method == "nested":
        return _asymptotic_variance_nested(spec, draws, seed, inner)
    nodes = _nodes(spec, method, draws, seed)

    def value(x, w):
        return _variance_from_moments(conditional_moments(spec, x, 1), conditional_moments(spec, x, 0), w)

    return _batched(value, nodes)


def _asymptotic_variance_nested(spec: DgpSpec, draws: int, seed: SeedLike, inner: int) -> MCValue:
    outer = max(int(draws) // inner, 2 * _BATCHES)
    x = spec.covariate_law.sample(generator(seed, 0), outer)
    half_a = _conditional_sim(spec, x, inner // 2, generator(seed, 1))
    half_b = _conditional_sim(spec, x, inner - inner // 2, generator(seed, 2))

    def value(idx):
        w = np.full(idx.size, 1.0 / idx.size)
        total = 0.0
        ga = np.zeros(idx.size)
        gb = np.zeros(idx.size)
        for d in (1, 0):
            pa, m1a, m2a = (v[idx] for v in half_a[d])
            pb, m1b, m2b = (v[idx] for v in half_b[d])
            p = 0.5 * (pa + pb)
            m1 = 0.5 * (m1a + m1b)
            m2 = 0.5 * (m2a + m2b)
            pbar, e1, e2 = float(w @ p), float(w @ m1), float(w @ m2)
            total += (e2 - e1 * e1 / pbar) / pbar**2
            ga += (m1a - (e1 / pbar) * pa) / pbar
            gb += (m1b - (e1 / pbar) * pb) / pbar
        # independent halves: E[ga gb | X] = E[Yt(1) + Yt(0) | X]^2
        return total - 0.5 * float(w @ (ga * gb))

    full = value(np.arange(outer))
    parts = [value(b) for b in np.array_split(np.arange(outer), _BATCHES)]
    return MCValue(full, float(np.std(parts, ddof=1) / math.sqrt(_BATCHES)))


# attrition common to both arms -------------------------------------------------


def remark3_decompositions(spec: DgpSpec, draws: int = DEFAULT_DRAWS, seed: SeedLike = 0, method: str = "mc") -> tuple[MCValue, MCValue]:
    """CATE-weighted forms of the two matched-pair estimands when ``R(1) = R(0) = R``.

    Returns ``E[tau(X) q(X)] / E[q(X)]`` and ``E[tau(X) q(X)^2] / E[q(X)^2]``
    with ``q(x) = P(R = 1 | x)``. Requires attrition independent of outcomes
    given X (zero outcome/attrition error covariances).
    """
    if not spec.common_attrition:
        raise CapabilityError("decomposition requires common_attrition = true")
    if np.any(np.abs(spec.error_cov[:2, 2:]) > 0.0):
        raise CapabilityError("decomposition requires zero covariance between outcome and attrition errors")
    nodes = _nodes(spec, method, draws, seed)
    q = conditional_moments(spec, nodes.x, 1)[0]
    tau = cate(spec, nodes.x)
    return _ratio(tau * q, q, nodes, "theta_obs weights"), _ratio(tau * q * q, q * q, nodes, "theta_drop weights")


# reports -----------------------------------------------------------------------


@dataclass
class EstimandReport:
    theta: float
    theta_obs: float
    theta_drop: float
    theta_sfe: float | None = None
    sigma_sq_mp: float | None = None
    mc_draws: int = DEFAULT_DRAWS
    seed: int = 0
    mc_se: dict[str, float] = field(default_factory=dict)

    def as_flat(self) -> dict[str, float | int | None]:
        flat = {k: v for k, v in asdict(self).items() if k != "mc_se"}
        for key, se in self.mc_se.items():
            flat[f"{key}_se"] = se
        return flat

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.as_flat().items())

    def csv_header(self) -> list[str]:
        return list(self.as_flat())

    def csv_row(self) -> list[str]:
        return [_fmt(v) for v in self.as_flat().values()]

    @classmethod
    def from_text(cls, text: str) -> "EstimandReport":
        flat: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                key, _, val = line.partition("=")
                flat[key.strip()] = val.strip()
        conv = lambda v: None if v in ("", "None", "NA") else float(v)  # noqa: E731
        se = {k[:-3]: conv(v) for k, v in flat.items() if k.endswith("_se")}
        return cls(
            theta=conv(flat["theta"]),
            theta_obs=conv(flat["theta_obs"]),
            theta_drop=conv(flat["theta_drop"]),
            theta_sfe=conv(flat.get("theta_sfe", "")),
            sigma_sq_mp=conv(flat.get("sigma_sq_mp", "")),
            mc_draws=int(float(flat.get("mc_draws", DEFAULT_DRAWS))),
            seed=int(float(flat.get("seed", 0))),
            mc_se=se,
        )


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def estimand_report(
    spec: DgpSpec,
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
    cutpoints=None,
    nu: float = 0.5,
    variance: bool = True,
) -> EstimandReport:
    obs = estimand_obs(spec, draws, seed)
    drop = estimand_drop(spec, draws, seed)
    se = {"theta_obs": obs.se, "theta_drop": drop.se}
    sfe = None
    if cutpoints is not None:
        sfe = estimand_sfe(spec, cutpoints, nu, draws, seed)
        se["theta_sfe"] = sfe.se
    var = None
    if variance:
        var = asymptotic_variance(spec, draws, seed)
        se["sigma_sq_mp"] = var.se
    return EstimandReport(
        theta=true_ate(spec),
        theta_obs=obs.value,
        theta_drop=drop.value,
        theta_sfe=None if sfe is None else sfe.value,
        sigma_sq_mp=None if var is None else var.value,
        mc_draws=int(draws),
        seed=int(seed),
        mc_se=se,
    )

"""Data-generating processes over latent unit tuples ``(X, Y(1), Y(0), R(1), R(0))``.

The supported family is the Gaussian-threshold model::

    Y(d) = mu_d(X) + eps_Y(d)
    R(d) = 1{eps_R(d) <= nu_d(X)}

with ``(eps_Y(1), eps_Y(0), eps_R(1), eps_R(0)) ~ N(0, Sigma)``, unit variances,
and ``mu_d``/``nu_d`` polynomials in a scalar covariate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from numpy.polynomial import polynomial as P
from scipy import special

from .errors import CapabilityError, NumericError, SpecificationError
from .rng import SeedLike, generator

# Stand-in for an infinite attrition threshold in serializable polynomials.
BIG_THRESHOLD = 1e9

CHUNK_SIZE = 1 << 16

_EIG_TOL = 1e-10


@dataclass(frozen=True)
class CovariateLaw:
    """Distribution of the scalar covariate.

    ``kind`` is one of ``"normal"`` (standard normal), ``"bernoulli"`` or
    ``"grid"`` (finite support ``points`` with ``probs``).
    """

    kind: str = "normal"
    p: float | None = None
    points: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    @classmethod
    def standard_normal(cls) -> "CovariateLaw":
        return cls("normal")

    @classmethod
    def bernoulli(cls, p: float) -> "CovariateLaw":
        return cls("bernoulli", p=float(p))

    @classmethod
    def grid(cls, points, probs) -> "CovariateLaw":
        return cls("grid", points=tuple(float(v) for v in points), probs=tuple(float(v) for v in probs))

    @property
    def is_finite(self) -> bool:
        return self.kind in ("bernoulli", "grid")

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points and probabilities of a finite law."""
        if self.kind == "bernoulli":
            return np.array([0.0, 1.0]), np.array([1.0 - self.p, self.p])
        if self.kind == "grid":
            return np.asarray(self.points, float), np.asarray(self.probs, float)
        raise CapabilityError(f"covariate law {self.kind!r} has no finite support")

    def validate(self) -> None:
        if self.kind == "normal":
            return
        if self.kind == "bernoulli":
            if self.p is None or not 0.0 < self.p < 1.0:
                raise SpecificationError(f"Bernoulli p must lie in (0, 1), got {self.p}")
            return
        if self.kind == "grid":
            pts, pr = np.asarray(self.points, float), np.asarray(self.probs, float)
            if pts.size == 0 or pts.shape != pr.shape:
                raise SpecificationError("grid points and probabilities must be non-empty and equal length")
            if not np.all(np.isfinite(pts)):
                raise SpecificationError("grid points must be finite")
            if np.any(pr <= 0.0) or np.any(pr > 1.0) or abs(pr.sum() - 1.0) > 1e-9:
                raise SpecificationError("grid probabilities must lie in (0, 1] and sum to 1")
            return
        raise SpecificationError(f"unknown covariate law {self.kind!r}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "normal":
            return rng.standard_normal(n)
        pts, pr = self.support()
        return pts[rng.choice(pts.size, size=n, p=pr)]

    def moment(self, k: int) -> float:
        """``E[X**k]``."""
        if self.kind == "normal":
            return 0.0 if k % 2 else float(math.prod(range(k - 1, 0, -2)))
        pts, pr = self.support()
        return float(np.dot(pr, pts**k))

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "normal":
            return {"kind": "normal"}
        if self.kind == "bernoulli":
            return {"kind": "bernoulli", "p": self.p}
        return {"kind": "grid", "points": list(self.points), "probs": list(self.probs)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CovariateLaw":
        kind = data.get("kind", "normal")
        if kind == "normal":
            return cls.standard_normal()
        if kind == "bernoulli":
            return cls.bernoulli(data["p"])
        if kind == "grid":
            return cls.grid(data["points"], data["probs"])
        raise SpecificationError(f"unknown covariate law {kind!r}")


def _coefs(c) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(c, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise SpecificationError("polynomial coefficients must be a non-empty vector")
    return tuple(float(v) for v in arr)


def equicorrelated(rho: float) -> np.ndarray:
    """4x4 unit-diagonal covariance with every off-diagonal entry ``rho``."""
    cov = np.full((4, 4), float(rho))
    np.fill_diagonal(cov, 1.0)
    return cov


@dataclass(frozen=True)
class DgpSpec:
    """Gaussian-threshold data-generating process.

    Polynomial coefficients are in ascending order, ``c[0] + c[1] x + ...``.
    ``error_cov`` orders the errors as ``(eps_Y(1), eps_Y(0), eps_R(1), eps_R(0))``.
    """

    covariate_law: CovariateLaw
    mu1: tuple[float, ...]
    mu0: tuple[float, ...]
    nu1: tuple[float, ...]
    nu0: tuple[float, ...]
    error_cov: np.ndarray = field(default_factory=lambda: np.eye(4))
    common_attrition: bool = False

    def __post_init__(self):
        for name in ("mu1", "mu0", "nu1", "nu0"):
            object.__setattr__(self, name, _coefs(getattr(self, name)))
        cov = np.array(self.error_cov, dtype=float)
        cov.setflags(write=False)
        object.__setattr__(self, "error_cov", cov)
        self.validate()

    def __eq__(self, other):
        if not isinstance(other, DgpSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(yaml.safe_dump(self.to_dict()))

    def validate(self) -> None:
        self.covariate_law.validate()
        cov = self.error_cov
        if cov.shape != (4, 4) or not np.all(np.isfinite(cov)):
            raise SpecificationError("error_cov must be a finite 4x4 matrix")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise SpecificationError("error_cov must be symmetric")
        if not np.allclose(np.diag(cov), 1.0, atol=1e-12, rtol=0):
            raise SpecificationError("error_cov must have unit diagonal")
        if np.linalg.eigvalsh(cov).min() < -_EIG_TOL:
            raise SpecificationError("error_cov is not positive semidefinite")
        if self.common_attrition:
            if np.trim_zeros(np.array(self.nu1), "b").tolist() != np.trim_zeros(np.array(self.nu0), "b").tolist():
                raise SpecificationError("common_attrition requires nu1 == nu0")
            if not np.allclose(cov[2], cov[3], atol=1e-12, rtol=0):
                raise SpecificationError("common_attrition requires eps_R(1) == eps_R(0) in error_cov")
        for d in (0, 1):
            if survival_mass(self, d) <= 0.0:
                raise SpecificationError(f"attrition is certain in arm {d}: E[R({d})] = 0")

    # conditional structure -------------------------------------------------

    def mu(self, d: int, x) -> np.ndarray:
        return _polyval(x, self.mu1 if d == 1 else self.mu0)

    def nu(self, d: int, x) -> np.ndarray:
        return _polyval(x, self.nu1 if d == 1 else self.nu0)

    def outcome_attrition_cov(self, d: int) -> float:
        """``cov(eps_Y(d), eps_R(d))``."""
        return float(self.error_cov[0, 2] if d == 1 else self.error_cov[1, 3])

    def sqrt_cov(self) -> np.ndarray:
        """Symmetric square root of ``error_cov`` with eigenvalues clipped at 0."""
        w, v = np.linalg.eigh(self.error_cov)
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T

    def replace(self, **changes) -> "DgpSpec":
        data = {
            "covariate_law": self.covariate_law,
            "mu1": self.mu1,
            "mu0": self.mu0,
            "nu1": self.nu1,
            "nu0": self.nu0,
            "error_cov": self.error_cov,
            "common_attrition": self.common_attrition,
        }
        data.update(changes)
        return DgpSpec(**data)

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "covariate_law": self.covariate_law.to_dict(),
            "mu1": list(self.mu1),
            "mu0": list(self.mu0),
            "nu1": list(self.nu1),
            "nu0": list(self.nu0),
            "error_cov": [list(map(float, row)) for row in self.error_cov],
            "common_attrition": bool(self.common_attrition),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DgpSpec":
        if "preset" in data:
            if data["preset"] not in PRESETS:
                raise SpecificationError(f"unknown preset {data['preset']!r}; known: {sorted(PRESETS)}")
            return PRESETS[data["preset"]]
        try:
            cov = data.get("error_cov")
            if cov is None:
                cov = equicorrelated(data.get("error_corr", 0.0))
            return cls(
                covariate_law=CovariateLaw.from_dict(data.get("covariate_law", {"kind": "normal"})),
                mu1=data["mu1"],
                mu0=data["mu0"],
                nu1=data["nu1"],
                nu0=data["nu0"],
                error_cov=np.asarray(cov, dtype=float),
                common_attrition=bool(data.get("common_attrition", False)),
            )
        except KeyError as exc:
            raise SpecificationError(f"missing DGP field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SpecificationError):
                raise
            raise SpecificationError(f"malformed DGP field: {exc}") from None


def _polyval(x, coefs) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        out = P.polyval(np.asarray(x, dtype=float), coefs)
    if not np.all(np.isfinite(out)):
        raise NumericError("polynomial evaluation overflowed")
    return out


def survival_mass(spec: DgpSpec, d: int) -> float:
    """``E[R(d)]``, exact for finite laws and by Gauss-Hermite quadrature otherwise."""
    if spec.covariate_law.is_finite:
        x, w = spec.covariate_law.support()
    else:
        x, w = hermite_nodes()
    return float(np.dot(w, special.ndtr(spec.nu(d, x))))


def hermite_nodes(deg: int = 160) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights for expectations under N(0, 1)."""
    x, w = np.polynomial.hermite_e.hermegauss(deg)
    return x, w / w.sum()


# presets ---------------------------------------------------------------------

PRESETS: dict[str, DgpSpec] = {}


def _register_presets() -> None:
    cov = equicorrelated(-0.3)
    normal = CovariateLaw.standard_normal()
    PRESETS["appendix-ex1"] = DgpSpec(normal, mu1=[0, 2], mu0=[0, 0, 0, 1], nu1=[0, 1], nu0=[0, 0, 1], error_cov=cov)
    PRESETS["appendix-ex2"] = DgpSpec(normal, mu1=[0, 2], mu0=[0, 1], nu1=[0, 1], nu0=[0, 1], error_cov=cov)
    # Binary covariate: X=1 never attrits, X=0 is observed only when treated.
    PRESETS["binary-example"] = DgpSpec(
        CovariateLaw.bernoulli(0.5),
        mu1=[0, 2],
        mu0=[0],
        nu1=[BIG_THRESHOLD],
        nu0=[-BIG_THRESHOLD, 2 * BIG_THRESHOLD],
        error_cov=np.eye(4),
    )


_register_presets()


def load_spec(path: str | Path) -> DgpSpec:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise SpecificationError(f"{path}: expected a mapping at top level")
    return DgpSpec.from_dict(data.get("dgp", data))


def dump_spec(spec: DgpSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump({"dgp": spec.to_dict()}, fh, sort_keys=False)


# sampling --------------------------------------------------------------------


@dataclass
class PotentialTable:
    """Latent unit data; one row per unit."""

    x: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    r1: np.ndarray
    r0: np.ndarray

    def __len__(self) -> int:
        return self.x.size

    def take(self, idx) -> "PotentialTable":
        return PotentialTable(self.x[idx], self.y1[idx], self.y0[idx], self.r1[idx], self.r0[idx])


def _draw_chunk(spec: DgpSpec, root: np.ndarray, m: int, seed: SeedLike, k: int):
    rng = generator(seed, k)
    x = spec.covariate_law.sample(rng, m)
    eps = rng.standard_normal((m, 4)) @ root
    if spec.common_attrition:
        eps[:, 3] = eps[:, 2]
    y1 = spec.mu(1, x) + eps[:, 0]
    y0 = spec.mu(0, x) + eps[:, 1]
    r1 = (eps[:, 2] <= spec.nu(1, x)).astype(np.int8)
    r0 = (eps[:, 3] <= spec.nu(0, x)).astype(np.int8)
    return x, y1, y0, r1, r0


def draw_sample(spec: DgpSpec, n: int, seed: SeedLike, workers: int = 1) -> PotentialTable:
    """Draw ``n`` i.i.d. latent rows.

    Rows are generated in fixed-size chunks, chunk ``k`` from the stream
    ``(seed, k)``; the table is identical for any ``workers``.
    """
    if int(n) < 1:
        raise SpecificationError(f"n must be positive, got {n}")
    n = int(n)
    root = spec.sqrt_cov()
    sizes = [min(CHUNK_SIZE, n - start) for start in range(0, n, CHUNK_SIZE)]
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda k: _draw_chunk(spec, root, sizes[k], seed, k), range(len(sizes))))
    else:
        parts = [_draw_chunk(spec, root, m, seed, k) for k, m in enumerate(sizes)]
    return PotentialTable(*(np.concatenate(cols) for cols in zip(*parts)))


# closed-form conditional moments --------------------------------------------


def conditional_moments(spec: DgpSpec, x, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(E[R(d)|x], E[Y(d)R(d)|x], E[Y(d)^2 R(d)|x])`` in closed form.

    With ``s = cov(eps_Y, eps_R)``, ``t = nu_d(x)`` and ``m = mu_d(x)``::

        E[R]      = Phi(t)
        E[Y R]    = m Phi(t) - s phi(t)
        E[Y^2 R]  = (m^2 + 1) Phi(t) - 2 m s phi(t) - s^2 t phi(t)
    """
    if not isinstance(spec, DgpSpec):
        raise CapabilityError("closed-form moments are only available for the Gaussian-threshold family")
    if d not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {d}")
    m = spec.mu(d, x)
    t = spec.nu(d, x)
    s = spec.outcome_attrition_cov(d)
    cdf = special.ndtr(t)
    with np.errstate(over="ignore"):
        pdf = np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    m1 = m * cdf - s * pdf
    m2 = (m * m + 1.0) * cdf - 2.0 * m * s * pdf - s * s * t * pdf
    return cdf, m1, m2


def conditional_draws(spec: DgpSpec, x: float, d: int, n: int, seed: SeedLike) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``(Y(d), R(d))`` at a fixed covariate value."""
    rng = generator(seed)
    s = spec.outcome_attrition_cov(d)
    e_r = rng.standard_normal(n)
    e_y = s * e_r + math.sqrt(max(1.0 - s * s, 0.0)) * rng.standard_normal(n)
    y = float(spec.mu(d, x)) + e_y
    r = (e_r <= float(spec.nu(d, x))).astype(np.int8)
    return y, r

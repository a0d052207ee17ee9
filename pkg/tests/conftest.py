import numpy as np
import pytest

from attrition_rct import _kernels
from attrition_rct.design import observe, pair_adjacent, randomize_within_pairs
from attrition_rct.dgp import PRESETS, DgpSpec, CovariateLaw, draw_sample, equicorrelated

IMPLS = [_kernels.numpy_impl] + ([_kernels.numba_impl] if _kernels.numba_impl is not None else [])


@pytest.fixture(params=IMPLS, ids=lambda impl: impl.name)
def kernel(request, monkeypatch):
    """Run the test once per kernel backend."""
    monkeypatch.setattr(_kernels, "active", request.param)
    return request.param


@pytest.fixture
def ex1():
    return PRESETS["appendix-ex1"]


@pytest.fixture
def ex2():
    return PRESETS["appendix-ex2"]


def pair_sample(spec, n, seed):
    table = draw_sample(spec, n, seed)
    pa = pair_adjacent(table.x)
    d = randomize_within_pairs(pa, seed + 1)
    return table, pa, observe(table, d, pair_id=pa.pair_ids())


def no_attrition(spec: DgpSpec) -> DgpSpec:
    return spec.replace(nu1=[1e9], nu0=[1e9])


def random_spec(rng: np.random.Generator) -> DgpSpec:
    """Gaussian-threshold spec with random low-degree polynomials and a random correlation matrix."""
    a = rng.normal(size=(4, 4))
    cov = a @ a.T
    dinv = 1.0 / np.sqrt(np.diag(cov))
    cov = cov * dinv[:, None] * dinv[None, :]
    np.fill_diagonal(cov, 1.0)
    return DgpSpec(
        CovariateLaw.standard_normal(),
        mu1=rng.normal(size=3),
        mu0=rng.normal(size=3),
        nu1=rng.normal(scale=0.7, size=2),
        nu0=rng.normal(scale=0.7, size=2),
        error_cov=cov,
    )


def block_cov(outcome_corr: float = 0.4, attrition_corr: float = 0.5) -> np.ndarray:
    """Error covariance with outcome errors independent of attrition errors."""
    cov = np.eye(4)
    cov[0, 1] = cov[1, 0] = outcome_corr
    cov[2, 3] = cov[3, 2] = attrition_corr
    return cov


def selection_cov() -> np.ndarray:
    """Strong outcome/attrition error correlation of opposite sign in the two arms."""
    cov = block_cov(0.4, 0.3)
    cov[0, 2] = cov[2, 0] = 0.6
    cov[1, 3] = cov[3, 1] = -0.6
    return cov


def identification_specs() -> dict[str, DgpSpec]:
    """Specs built to satisfy the attrition assumptions one at a time and jointly.

    ``"outcomes_indep"``: outcomes independent of attrition (Y free of X, no
    cross-correlation) while attrition depends on X.
    ``"attrition_indep_x"``: attrition thresholds constant in X while
    outcome and attrition errors correlate.
    ``"both"``: constant thresholds and no cross-correlation.
    """
    normal = CovariateLaw.standard_normal()
    return {
        "outcomes_indep": DgpSpec(normal, mu1=[1.5], mu0=[0.5], nu1=[0, 1], nu0=[0.2, -0.8], error_cov=block_cov()),
        "attrition_indep_x": DgpSpec(normal, mu1=[0, 2], mu0=[0, 0, 0, 1], nu1=[0.3], nu0=[-0.2], error_cov=selection_cov()),
        "both": DgpSpec(normal, mu1=[0, 2], mu0=[0, 0, 0, 1], nu1=[0.3], nu0=[-0.2], error_cov=block_cov()),
    }


def within(a, b, k: float = 3.0) -> bool:
    """``|a - b|`` within ``k`` combined standard errors of two MC values."""
    se = float(np.hypot(getattr(a, "se", 0.0), getattr(b, "se", 0.0)))
    return abs(float(a) - float(b)) <= k * se + 1e-12


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

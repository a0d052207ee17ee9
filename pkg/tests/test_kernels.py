import os
import subprocess
import sys

import numpy as np
import pytest

from attrition_rct import _kernels
from attrition_rct.design import pair_adjacent
from attrition_rct.dgp import PRESETS, draw_sample

pytestmark = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba not importable")

NP, NB = _kernels.numpy_impl, _kernels.numba_impl


def _pair_inputs(seed, n=2000):
    t = draw_sample(PRESETS["appendix-ex1"], n, seed)
    pa = pair_adjacent(t.x)
    coin = np.random.default_rng(seed).integers(0, 2, size=pa.n_pairs, dtype=np.int8)
    return t, pa, coin


@pytest.mark.parametrize("seed", range(5))
def test_pair_replication_agrees(seed):
    t, pa, coin = _pair_inputs(seed)
    args = (t.y1, t.y0, t.r1, t.r0, pa.first, pa.second, coin)
    np.testing.assert_allclose(NB.pair_replication(*args), NP.pair_replication(*args), rtol=1e-12, equal_nan=True)


def test_small_kernels_agree():
    rng = np.random.default_rng(1)
    n = 1001
    y = rng.normal(size=n)
    r = (rng.random(n) < 0.7).astype(np.int8)
    d = rng.integers(0, 2, size=n).astype(np.int8)
    y = y * r
    first, second = np.arange(0, n - 1, 2), np.arange(1, n, 2)
    labels = rng.integers(0, 7, size=n)
    for name, args in (
        ("drop_sums", (y, r, d, first, second)),
        ("mp_variance_sums", (y, d, first, second)),
        ("arm_sums", (y, r, d)),
        ("strata_fe_sums", (y, r, d, labels, 7)),
    ):
        np.testing.assert_allclose(getattr(NB, name)(*args), getattr(NP, name)(*args), rtol=1e-10, err_msg=name)


def test_block_assign_agrees():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 5, size=500)
    keys, extra = rng.random(500), rng.random(5)
    np.testing.assert_array_equal(NB.block_assign(labels, keys, extra, 0.37, 5), NP.block_assign(labels, keys, extra, 0.37, 5))


def _active_name(flag):
    env = dict(os.environ)
    env.pop("ATTRITION_RCT_DISABLE_JIT", None)
    if flag is not None:
        env["ATTRITION_RCT_DISABLE_JIT"] = flag
    out = subprocess.run(
        [sys.executable, "-c", "from attrition_rct import _kernels; print(_kernels.active.name)"],
        env=env, capture_output=True, text=True, check=True,
    )
    return out.stdout.strip()


@pytest.mark.parametrize("flag, expected", [(None, "numba"), ("0", "numba"), ("1", "numpy"), ("true", "numpy")])
def test_env_flag_selects_backend(flag, expected):
    assert _active_name(flag) == expected


def test_benchmark_runs(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.main(["--n-units", "2000", "--repeat", "2"])
    assert "pair_replication" in capsys.readouterr().out

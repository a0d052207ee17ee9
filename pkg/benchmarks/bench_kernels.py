"""Time the numpy and numba kernels on the same inputs.

    python benchmarks/bench_kernels.py [--n-units N] [--repeat R]

Reports the best-of-R wall time per kernel and backend, after one warm-up
call (which also triggers JIT compilation), and checks that both backends
agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from attrition_rct import _kernels
from attrition_rct.design import StrataAssignment, pair_adjacent, stratify_by_quantiles
from attrition_rct.dgp import PRESETS, draw_sample


def _inputs(n: int):
    t = draw_sample(PRESETS["appendix-ex1"], n, 0)
    pa = pair_adjacent(t.x)
    rng = np.random.default_rng(1)
    coin = rng.integers(0, 2, size=pa.n_pairs, dtype=np.int8)
    d = np.empty(n, dtype=np.int8)
    d[pa.first], d[pa.second] = coin, 1 - coin
    r = np.where(d == 1, t.r1, t.r0).astype(np.int8)
    y = np.where(d == 1, t.y1, t.y0) * r
    labels = StrataAssignment(stratify_by_quantiles(t.x, 10)).labels
    return {
        "pair_replication": (t.y1, t.y0, t.r1, t.r0, pa.first, pa.second, coin),
        "drop_sums": (y, r, d, pa.first, pa.second),
        "mp_variance_sums": (y, d, pa.first, pa.second),
        "arm_sums": (y, r, d),
        "strata_fe_sums": (y, r, d, labels, 10),
        "block_assign": (labels, rng.random(n), rng.random(10), 0.5, 10),
    }


def _best(fn, args, repeat: int) -> float:
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-units", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _kernels.numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"n_units = {args.n_units}, best of {args.repeat}")
    print(f"{'kernel':>18}  {'numpy ms':>10}  {'numba ms':>10}  {'speedup':>8}")
    for name, inp in _inputs(args.n_units).items():
        np_fn, nb_fn = getattr(_kernels.numpy_impl, name), getattr(_kernels.numba_impl, name)
        np.testing.assert_allclose(nb_fn(*inp), np_fn(*inp), rtol=1e-9, equal_nan=True)
        t_np, t_nb = _best(np_fn, inp, args.repeat), _best(nb_fn, inp, args.repeat)
        print(f"{name:>18}  {1e3 * t_np:10.3f}  {1e3 * t_nb:10.3f}  {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()

"""Inner loops shared by the estimators and the Monte Carlo engine.

Each kernel exists twice: a pure-numpy version and a numba ``@njit`` version
with the same signature and results. The numba path is used when numba imports
and the environment variable ``ATTRITION_RCT_DISABLE_JIT`` is unset or ``0``.
Tests and ``benchmarks/bench_kernels.py`` import :data:`numpy_impl` and
:data:`numba_impl` directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

# ---------------------------------------------------------------------------
# numpy reference versions
# ---------------------------------------------------------------------------


def _np_drop_sums(y, r, d, first, second):
    both = (r[first] * r[second]).astype(np.float64)
    contrast = (y[first] - y[second]) * (d[first] - d[second])
    return float(both.sum()), float(np.dot(both, contrast))


def _np_mp_variance_sums(yhat, d, first, second):
    gap = yhat[second] - yhat[first]
    tau = float(np.dot(gap, gap))
    m = first.size // 2
    a, b = first[0 : 2 * m : 2], second[0 : 2 * m : 2]
    c, e = first[1 : 2 * m : 2], second[1 : 2 * m : 2]
    lam = float(np.sum((yhat[a] - yhat[b]) * (yhat[c] - yhat[e]) * (d[a] - d[b]) * (d[c] - d[e])))
    return tau, lam


def _np_arm_sums(y, r, d):
    rd = r * d
    rc = r * (1 - d)
    return float(rd.sum()), float(np.dot(rd, y)), float(rc.sum()), float(np.dot(rc, y))


def _np_strata_fe_sums(y, r, d, labels, n_strata):
    w = r.astype(np.float64)
    n_s = np.bincount(labels, weights=w, minlength=n_strata)
    n1_s = np.bincount(labels, weights=w * d, minlength=n_strata)
    share = np.divide(n1_s, n_s, out=np.zeros(n_strata), where=n_s > 0)
    dt = (d - share[labels]) * w
    num = float(np.dot(dt, y))
    den = float(np.dot(dt, dt))
    free = int(np.sum((n_s > 0) & ((n1_s == 0) | (n1_s == n_s))))
    return num, den, free


def _np_block_assign(labels, keys, extra_u, nu, n_strata):
    n_s = np.bincount(labels, minlength=n_strata).astype(np.float64)
    target = np.floor(nu * n_s)
    target += extra_u < (nu * n_s - target)
    order = np.lexsort((keys, labels))
    starts = np.concatenate(([0], np.cumsum(n_s)[:-1])).astype(np.int64)
    rank = np.empty(labels.size, dtype=np.int64)
    rank[order] = np.arange(labels.size) - starts[labels[order]]
    return (rank < target[labels]).astype(np.int8)


def _np_pair_replication(y1, y0, r1, r0, first, second, coin):
    n = y1.size
    d = np.zeros(n, dtype=np.int8)
    d[first] = coin
    d[second] = 1 - coin
    r = np.where(d == 1, r1, r0).astype(np.int8)
    y = np.where(d == 1, y1, y0) * r
    out = np.full(8, np.nan)
    n1, s1, n0, s0 = _np_arm_sums(y, r, d)
    out[4], out[5], out[6] = 0.0, n1, n0
    out[7] = 1.0 - (n1 + n0) / n
    if n1 > 0 and n0 > 0:
        mean1, mean0 = s1 / n1, s0 / n0
        out[0] = mean1 - mean0
        n_pairs = first.size
        scale = np.where(d == 1, n_pairs / n1, n_pairs / n0)
        yhat = r * scale * (y - np.where(d == 1, mean1, mean0))
        out[2], out[3] = _np_mp_variance_sums(yhat, d, first, second)
    cnt, tot = _np_drop_sums(y, r, d, first, second)
    out[4] = cnt
    if cnt > 0:
        out[1] = tot / cnt
    return out


numpy_impl = SimpleNamespace(
    name="numpy",
    drop_sums=_np_drop_sums,
    mp_variance_sums=_np_mp_variance_sums,
    arm_sums=_np_arm_sums,
    strata_fe_sums=_np_strata_fe_sums,
    block_assign=_np_block_assign,
    pair_replication=_np_pair_replication,
)

# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------


def _build_numba():
    import numba as nb

    jit = nb.njit(cache=True, nogil=True)

    @jit
    def drop_sums(y, r, d, first, second):
        cnt = 0.0
        tot = 0.0
        for j in range(first.size):
            a, b = first[j], second[j]
            if r[a] == 1 and r[b] == 1:
                cnt += 1.0
                tot += (y[a] - y[b]) * (d[a] - d[b])
        return cnt, tot

    @jit
    def mp_variance_sums(yhat, d, first, second):
        tau = 0.0
        for j in range(first.size):
            g = yhat[second[j]] - yhat[first[j]]
            tau += g * g
        lam = 0.0
        for k in range(first.size // 2):
            a, b = first[2 * k], second[2 * k]
            c, e = first[2 * k + 1], second[2 * k + 1]
            lam += (yhat[a] - yhat[b]) * (yhat[c] - yhat[e]) * (d[a] - d[b]) * (d[c] - d[e])
        return tau, lam

    @jit
    def arm_sums(y, r, d):
        n1 = 0.0
        s1 = 0.0
        n0 = 0.0
        s0 = 0.0
        for i in range(y.size):
            if r[i] == 1:
                if d[i] == 1:
                    n1 += 1.0
                    s1 += y[i]
                else:
                    n0 += 1.0
                    s0 += y[i]
        return n1, s1, n0, s0

    @jit
    def strata_fe_sums(y, r, d, labels, n_strata):
        n_s = np.zeros(n_strata)
        n1_s = np.zeros(n_strata)
        for i in range(y.size):
            if r[i] == 1:
                n_s[labels[i]] += 1.0
                n1_s[labels[i]] += d[i]
        num = 0.0
        den = 0.0
        for i in range(y.size):
            if r[i] == 1:
                s = labels[i]
                dt = d[i] - n1_s[s] / n_s[s]
                num += dt * y[i]
                den += dt * dt
        free = 0
        for s in range(n_strata):
            if n_s[s] > 0 and (n1_s[s] == 0 or n1_s[s] == n_s[s]):
                free += 1
        return num, den, free

    @jit
    def block_assign(labels, keys, extra_u, nu, n_strata):
        n = labels.size
        n_s = np.zeros(n_strata)
        for i in range(n):
            n_s[labels[i]] += 1.0
        target = np.empty(n_strata)
        for s in range(n_strata):
            base = np.floor(nu * n_s[s])
            target[s] = base + (1.0 if extra_u[s] < nu * n_s[s] - base else 0.0)
        order = np.argsort(keys, kind="mergesort")
        seen = np.zeros(n_strata)
        d = np.zeros(n, dtype=np.int8)
        for k in range(n):
            i = order[k]
            s = labels[i]
            if seen[s] < target[s]:
                d[i] = 1
            seen[s] += 1.0
        return d

    @jit
    def pair_replication(y1, y0, r1, r0, first, second, coin):
        n = y1.size
        n_pairs = first.size
        d = np.zeros(n, dtype=np.int8)
        for j in range(n_pairs):
            d[first[j]] = coin[j]
            d[second[j]] = 1 - coin[j]
        r = np.empty(n, dtype=np.int8)
        y = np.empty(n)
        for i in range(n):
            if d[i] == 1:
                r[i] = r1[i]
                y[i] = y1[i] * r1[i]
            else:
                r[i] = r0[i]
                y[i] = y0[i] * r0[i]
        out = np.full(8, np.nan)
        n1, s1, n0, s0 = arm_sums(y, r, d)
        out[5] = n1
        out[6] = n0
        out[7] = 1.0 - (n1 + n0) / n
        if n1 > 0 and n0 > 0:
            mean1 = s1 / n1
            mean0 = s0 / n0
            out[0] = mean1 - mean0
            yhat = np.zeros(n)
            for i in range(n):
                if r[i] == 1:
                    if d[i] == 1:
                        yhat[i] = (n_pairs / n1) * (y[i] - mean1)
                    else:
                        yhat[i] = (n_pairs / n0) * (y[i] - mean0)
            tau, lam = mp_variance_sums(yhat, d, first, second)
            out[2] = tau
            out[3] = lam
        cnt, tot = drop_sums(y, r, d, first, second)
        out[4] = cnt
        if cnt > 0:
            out[1] = tot / cnt
        return out

    return SimpleNamespace(
        name="numba",
        drop_sums=drop_sums,
        mp_variance_sums=mp_variance_sums,
        arm_sums=arm_sums,
        strata_fe_sums=strata_fe_sums,
        block_assign=block_assign,
        pair_replication=pair_replication,
    )


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

JIT_DISABLED = os.environ.get("ATTRITION_RCT_DISABLE_JIT", "0").strip().lower() not in ("", "0", "false", "no")

active = numpy_impl if JIT_DISABLED or numba_impl is None else numba_impl

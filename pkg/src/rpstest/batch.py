"""Vectorised statistics over many samples at once.

Each function takes an array of shape ``(B, n)`` whose rows are sorted
samples on the unit interval and returns a length-``B`` array.  These are
the workhorses of the Monte Carlo code; the scalar functions in
:mod:`rpstest.kernels` are the reference definitions they are tested
against.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from rpstest.kernels import min_rps, min_rss

# prefer layers that do not depend on the system TBB version
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_BLOCK = 32
_LANE_FLOOR = 1e-75
# reassociation only: zero spacings must still produce inf
_FAST = {"reassoc", "contract", "arcp", "nsz"}


@nb.njit(cache=True, fastmath=_FAST)
def _neg_log_sum(s, m):
    # one log per block of products, four independent lanes per block
    total = 0.0
    i = 0
    while i < m:
        end = min(i + _BLOCK, m)
        p0 = 1.0
        p1 = 1.0
        p2 = 1.0
        p3 = 1.0
        k = i
        while k + 4 <= end:
            p0 *= s[k]
            p1 *= s[k + 1]
            p2 *= s[k + 2]
            p3 *= s[k + 3]
            k += 4
        while k < end:
            p0 *= s[k]
            k += 1
        if p0 > _LANE_FLOOR and p1 > _LANE_FLOOR and p2 > _LANE_FLOOR and p3 > _LANE_FLOOR:
            total -= math.log((p0 * p1) * (p2 * p3))
        else:
            for k in range(i, end):
                if s[k] <= 0.0:
                    return math.inf
                total -= math.log(s[k])
        i = end
    return total


@nb.njit(cache=True, parallel=True, fastmath=_FAST)
def _rps_raw_rows(u):
    B, n = u.shape
    out = np.empty(B)
    for r in nb.prange(B):
        s = np.empty(n + 1)
        prev = 0.0
        for i in range(n):
            s[i] = u[r, i] - prev
            prev = u[r, i]
        s[n] = 1.0 - prev
        total = 0.0
        # S is the accumulated sum of the current level; normalising by it
        # lazily (through m log S) avoids a separate pass over the spacings
        S = 1.0
        m = n + 1
        while m > 1:
            total += _neg_log_sum(s, m) + m * math.log(S)
            if total == math.inf:
                break
            inv = 1.0 / S
            acc = 0.0
            for i in range(m - 1):
                v = (s[i] + s[i + 1]) * inv
                s[i] = v
                acc += v
            S = acc
            m -= 1
        out[r] = total
    return out


@nb.njit(cache=True, parallel=True)
def _rss_rows(u):
    B, n = u.shape
    out = np.empty(B)
    for r in nb.prange(B):
        s = np.empty(n + 1)
        prev = 0.0
        for i in range(n):
            s[i] = u[r, i] - prev
            prev = u[r, i]
        s[n] = 1.0 - prev
        total = 1.0
        m = n + 1
        while m > 1:
            sq = 0.0
            for i in range(m):
                sq += s[i] * s[i]
            total += sq
            acc = 0.0
            for i in range(m - 1):
                s[i] = s[i] + s[i + 1]
                acc += s[i]
            m -= 1
            inv = 1.0 / acc
            for i in range(m):
                s[i] *= inv
        out[r] = total
    return out


def rps_raw_batch(u: np.ndarray) -> np.ndarray:
    return _rps_raw_rows(np.ascontiguousarray(u, dtype=np.float64))


def rps_star_batch(u: np.ndarray) -> np.ndarray:
    u = np.ascontiguousarray(u, dtype=np.float64)
    return min_rps(u.shape[1]) / _rps_raw_rows(u)


def rss_batch(u: np.ndarray) -> np.ndarray:
    return _rss_rows(np.ascontiguousarray(u, dtype=np.float64))


def _full_spacings(u: np.ndarray) -> np.ndarray:
    B = u.shape[0]
    return np.diff(np.hstack([np.zeros((B, 1)), u, np.ones((B, 1))]), axis=1)


def moran_batch(u):
    with np.errstate(divide="ignore"):
        return -np.log(_full_spacings(u)).sum(axis=1)


def greenwood_batch(u):
    s = _full_spacings(u)
    return np.einsum("ij,ij->i", s, s)


def log_m_batch(u, m: int):
    B = u.shape[0]
    full = np.hstack([np.zeros((B, 1)), u, np.ones((B, 1))])
    with np.errstate(divide="ignore"):
        return -np.log(full[:, m:] - full[:, :-m]).sum(axis=1)


def sq_m_batch(u, m: int):
    B = u.shape[0]
    full = np.hstack([np.zeros((B, 1)), u, np.ones((B, 1))])
    sm = full[:, m:] - full[:, :-m]
    return np.einsum("ij,ij->i", sm, sm)


def ks_batch(u):
    n = u.shape[1]
    i = np.arange(1, n + 1)
    return np.maximum((i / n - u).max(axis=1), (u - (i - 1) / n).max(axis=1))


def cvm_batch(u):
    n = u.shape[1]
    i = np.arange(1, n + 1)
    return 1.0 / (12 * n) + (((2 * i - 1) / (2 * n) - u) ** 2).sum(axis=1)


def ad_batch(u):
    n = u.shape[1]
    i = np.arange(1, n + 1)
    with np.errstate(divide="ignore"):
        terms = (2 * i - 1) * (np.log(u) + np.log1p(-u[:, ::-1]))
    return -n - terms.sum(axis=1) / n


def _deltas(u):
    n = u.shape[1]
    return u - np.arange(1, n + 1) / (n + 1)


def pyke_batch(u):
    d = _deltas(u)
    return np.maximum(d.max(axis=1), -d.min(axis=1))


def brunk_batch(u):
    d = _deltas(u)
    return d.max(axis=1) - d.min(axis=1)


# name -> (batch function, tail)
# tail "lower": small values indicate departure from uniformity
STATISTICS = {
    "rps_star": (rps_star_batch, "lower"),
    "rss": (rss_batch, "upper"),
    "moran": (moran_batch, "upper"),
    "greenwood": (greenwood_batch, "upper"),
    "l2": (lambda u: log_m_batch(u, 2), "upper"),
    "l3": (lambda u: log_m_batch(u, 3), "upper"),
    "s2": (lambda u: sq_m_batch(u, 2), "upper"),
    "s3": (lambda u: sq_m_batch(u, 3), "upper"),
    "ks": (ks_batch, "upper"),
    "cvm": (cvm_batch, "upper"),
    "ad": (ad_batch, "upper"),
    "pyke": (pyke_batch, "upper"),
    "brunk": (brunk_batch, "upper"),
}

STATISTIC_CODES = {name: code for code, name in enumerate(STATISTICS, start=1)}


def batch_statistic(name: str, u: np.ndarray) -> np.ndarray:
    try:
        fn, _ = STATISTICS[name]
    except KeyError:
        raise ValueError(f"unknown statistic {name!r}") from None
    return fn(u)


def tail(name: str) -> str:
    return STATISTICS[name][1]


__all__ = [
    "STATISTICS",
    "STATISTIC_CODES",
    "batch_statistic",
    "tail",
    "rps_raw_batch",
    "rps_star_batch",
    "rss_batch",
    "min_rss",
]

"""Closed-form null distributions for a single sample (n = 1).

With one uniform point ``x`` the spacings are ``(x, 1 - x)``, which gives

* ``RPS* = ln 4 / -ln(x (1 - x))`` with CDF ``1 - sqrt(1 - 4^((r - 1) / r))``
  on ``(0, 1]``;
* ``RSS = 3/2 + 2 (x - 1/2)^2`` with CDF ``sqrt(2 r - 3)`` on ``[3/2, 2]``.

These pin the n = 1 column of every fitted table and serve as oracles for
the Monte Carlo pipeline.
"""

from __future__ import annotations

import math

import numpy as np

_LN4 = math.log(4.0)


def _array(v):
    return np.asarray(v, dtype=np.float64)


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def cdf_rps_star_n1(x):
    """CDF of RPS* for a single uniform sample."""
    x = _array(x)
    if np.any(~(x > 0.0)) or np.any(x > 1.0):
        raise ValueError("RPS* for n=1 lies in (0, 1]")
    e = np.exp((x - 1.0) / x * _LN4)
    # 1 - sqrt(1 - e) without cancellation for small e
    return _out(e / (1.0 + np.sqrt(-np.expm1((x - 1.0) / x * _LN4))))


def quantile_rps_star_n1(p):
    p = _array(p)
    if np.any(~(p > 0.0)) or np.any(p > 1.0):
        raise ValueError("quantile level must lie in (0, 1]")
    # 4^((x-1)/x) = 1 - (1-p)^2 = p (2 - p); the product form keeps small p exact
    L = np.where(p < 0.5, np.log(p * (2.0 - p)), np.log1p(-((1.0 - p) ** 2))) / _LN4
    return _out(1.0 / (1.0 - L))


def cdf_rss_n1(r):
    """CDF of RSS for a single uniform sample."""
    r = _array(r)
    if np.any(r < 1.5) or np.any(r > 2.0):
        raise ValueError("RSS for n=1 lies in [1.5, 2]")
    return _out(np.sqrt(2.0 * r - 3.0))


def quantile_rss_n1(p):
    p = _array(p)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("quantile level must lie in [0, 1]")
    return _out((p * p + 3.0) / 2.0)


# statistic -> (cdf, quantile) for the n = 1 anchor column
ANCHORS = {
    "rps_star": (cdf_rps_star_n1, quantile_rps_star_n1),
    "rss": (cdf_rss_n1, quantile_rss_n1),
}

"""Statistics on samples from the unit interval.

Everything here operates on an :class:`OrderedSample`, i.e. sorted values in
the open interval (0, 1) with implicit boundary points 0 and 1.  Samples from
any continuous null distribution are brought onto the unit interval with
:func:`pit_transform`.

All logarithms are natural logarithms.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateSampleError",
    "OrderedSample",
    "as_sample",
    "pit_transform",
    "spacings",
    "rps_levels",
    "rps_raw",
    "min_rps",
    "min_rss",
    "rps_star",
    "rss",
    "edf_statistics",
    "spacing_statistics",
]

JITTER_EPS = 1e-12
CLAMP_EPS = 1e-300


class DegenerateSampleError(ValueError):
    """Raised for samples a statistic is not defined on (ties, values at 0 or 1)."""


@dataclass(frozen=True)
class OrderedSample:
    """Ascending values strictly inside (0, 1).

    Use :meth:`from_values` to build one from unsorted data; the plain
    constructor assumes its input is already valid.
    """

    values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.n

    @classmethod
    def from_values(cls, values, policy: str = "strict") -> "OrderedSample":
        """Sort and validate `values`.

        Parameters
        ----------
        values : array_like
            Values on the unit interval.
        policy : {"strict", "jitter"}
            ``"strict"`` rejects ties and values equal to 0 or 1.  ``"jitter"``
            pushes 0 and 1 inwards and separates tied values by 1e-12.
        """
        if policy not in ("strict", "jitter"):
            raise ValueError(f"unknown duplicate policy {policy!r}")
        x = np.sort(np.asarray(values, dtype=np.float64).ravel())
        if x.size == 0:
            raise DegenerateSampleError("no samples")
        if not np.all(np.isfinite(x)):
            raise DegenerateSampleError("non-finite sample value")
        if x[0] < 0.0 or x[-1] > 1.0:
            raise DegenerateSampleError(
                f"sample outside the unit interval: [{x[0]!r}, {x[-1]!r}]"
            )
        if policy == "strict":
            if x[0] == 0.0 or x[-1] == 1.0:
                raise DegenerateSampleError(
                    "sample value exactly 0 or 1 (use the jitter policy to clamp)"
                )
            if np.any(np.diff(x) == 0.0):
                raise DegenerateSampleError(
                    "degenerate spacing: duplicate sample values"
                )
            return cls(x)
        return cls(_jitter(x))


def _jitter(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    # 1 - 1e-300 rounds to 1.0, so the upper clamp is the next double below 1
    x[x <= 0.0] = CLAMP_EPS
    x[x >= 1.0] = np.nextafter(1.0, 0.0)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[j + 1] == x[i]:
            j += 1
        if j > i:
            m = j - i + 1
            offsets = (np.arange(m) - (m - 1) / 2.0) * JITTER_EPS
            x[i : j + 1] = np.clip(x[i] + offsets, CLAMP_EPS, np.nextafter(1.0, 0.0))
        i = j + 1
    x.sort()
    if np.any(np.diff(x) <= 0.0):
        raise DegenerateSampleError("jitter could not separate tied values")
    return x


def as_sample(sample, policy: str = "strict") -> OrderedSample:
    if isinstance(sample, OrderedSample):
        return sample
    return OrderedSample.from_values(sample, policy=policy)


def pit_transform(
    raw: Sequence[float] | np.ndarray,
    null_cdf: Callable[[np.ndarray], np.ndarray],
    policy: str = "strict",
) -> OrderedSample:
    """Map raw observations through the null CDF onto the unit interval.

    `null_cdf` must accept a numpy array.  Values that map outside [0, 1]
    are treated as lying outside the support of the null distribution.
    """
    x = np.asarray(raw, dtype=np.float64).ravel()
    if x.size == 0:
        raise DegenerateSampleError("no samples")
    if not np.all(np.isfinite(x)):
        raise DegenerateSampleError("non-finite raw value")
    u = np.asarray(null_cdf(x), dtype=np.float64)
    bad = ~np.isfinite(u) | (u < 0.0) | (u > 1.0)
    if np.any(bad):
        raise DegenerateSampleError(
            f"sample outside the support of the null distribution: {x[bad][:5]}"
        )
    return OrderedSample.from_values(u, policy=policy)


def spacings(sample) -> np.ndarray:
    """The n+1 gaps between consecutive values, with 0 and 1 as boundaries."""
    x = as_sample(sample).values
    return np.diff(np.concatenate(([0.0], x, [1.0])))


def _recursive_levels(s: np.ndarray, term: Callable[[np.ndarray], float]) -> list[float]:
    # merge neighbours, then renormalise; stop when one spacing is left
    out = []
    while s.size > 1:
        out.append(term(s))
        s = s[:-1] + s[1:]
        s = s / s.sum()
    return out


def _neg_log_sum(s: np.ndarray) -> float:
    if np.any(s <= 0.0):
        raise DegenerateSampleError("degenerate spacing: zero-length spacing")
    return float(-np.sum(np.log(s)))


def rps_levels(sample) -> np.ndarray:
    """Per-level contributions M^(n+1), M^n, ..., M^2 of the RPS sum.

    The final level (a single spacing equal to 1) contributes nothing and is
    omitted.  Element 0 equals Moran's statistic.
    """
    return np.array(_recursive_levels(spacings(sample), _neg_log_sum))


def rps_raw(sample) -> float:
    """Recursive product of spacings (unbounded form)."""
    return float(math.fsum(rps_levels(sample)))


def min_rps(n: int) -> float:
    """Smallest attainable RPS for `n` samples (equidistant configuration)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return math.fsum(j * math.log(j) for j in range(1, n + 2))


def min_rss(n: int) -> float:
    """Smallest attainable RSS for `n` samples: the harmonic number H_(n+1)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return math.fsum(1.0 / j for j in range(1, n + 2))


def rps_star(sample) -> float:
    """Bounded RPS, ``min_rps(n) / rps_raw``; 1 for equidistant samples."""
    sample = as_sample(sample)
    return min_rps(sample.n) / rps_raw(sample)


def rss(sample) -> float:
    """Recursive sum of squared spacings, including the final unit level."""
    levels = _recursive_levels(spacings(sample), lambda s: float(np.dot(s, s)))
    return math.fsum(levels) + 1.0


def edf_statistics(sample) -> dict[str, float]:
    """EDF-based statistics against the uniform CDF.

    Returns a dict with keys ``ks`` (D_n), ``cvm`` (T), ``ad`` (A^2),
    ``pyke`` (C_n) and ``brunk`` (K_n).
    """
    x = as_sample(sample).values
    n = x.size
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - x)
    d_minus = np.max(x - (i - 1) / n)
    cvm = 1.0 / (12 * n) + float(np.sum(((2 * i - 1) / (2 * n) - x) ** 2))
    if x[0] <= 0.0 or x[-1] >= 1.0:
        ad = math.nan
    else:
        ad = -n - float(np.sum((2 * i - 1) * (np.log(x) + np.log1p(-x[::-1])))) / n
    delta = x - i / (n + 1)
    return {
        "ks": float(max(d_plus, d_minus)),
        "cvm": cvm,
        "ad": ad,
        "pyke": float(max(delta.max(), -delta.min())),
        "brunk": float(delta.max() - delta.min()),
    }


def spacing_statistics(sample, m: int = 2) -> dict[str, float]:
    """Moran, Greenwood and Cressie's m-th order spacing statistics.

    Keys: ``moran`` (M), ``greenwood`` (G), ``log_m`` (L_n^(m)) and
    ``sq_m`` (S_n^(m)).
    """
    x = as_sample(sample).values
    n = x.size
    if not 1 <= m <= n + 1:
        raise ValueError(f"spacing order m={m} outside [1, {n + 1}]")
    full = np.concatenate(([0.0], x, [1.0]))
    s = np.diff(full)
    sm = full[m:] - full[:-m]
    return {
        "moran": _neg_log_sum(s),
        "greenwood": float(np.dot(s, s)),
        "log_m": _neg_log_sum(sm),
        "sq_m": float(np.dot(sm, sm)),
    }

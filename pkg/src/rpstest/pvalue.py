"""p-values from fitted tables, with the tabulation error attached.

RPS* is small when samples cluster, so its p-value is the lower tail
``p = F(x; n)``; a perfectly regular sample has ``p = 1``.  Upper-tail
statistics such as RSS use ``p = 1 - F``.

A tabulated quantile at level ``p = k/N`` is an order statistic of ``N``
draws and therefore uncertain: the true level of the ``k``-th smallest
value follows ``Beta(k, N + 1 - k)``.  :func:`relative_error` reports the
relative half-width of its central 98% interval.
"""

from __future__ import annotations

import math
import os
from collections.abc import Callable
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from rpstest import kernels
from rpstest.batch import tail
from rpstest.exact import ANCHORS, cdf_rps_star_n1
from rpstest.special import beta_quantile
from rpstest.table_fit import CdfModel, FittedTable, build_cdf

__all__ = [
    "TestResult",
    "ErrorModel",
    "cdf_rps_star_n1",
    "pvalue",
    "relative_error",
    "required_samples",
    "load_table",
    "default_table_path",
    "rps_test",
    "pvalue_array",
    "TableNotFoundError",
]

TABLE_ENV = "RPSTEST_TABLE"
CREDIBILITY = 0.98
N_LIMIT = 10**13
GRANULARITY = 0.01


class TableNotFoundError(FileNotFoundError):
    """No fitted table covers the request."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    pvalue: float
    pvalue_error: float
    saturated: bool
    n: int
    statistic_id: str = "rps_star"

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ErrorModel:
    N: int
    credibility: float = CREDIBILITY

    def __post_init__(self):
        if self.N < 1000:
            raise ValueError(f"N={self.N} is below the minimum of 1000")
        if not 0.0 < self.credibility < 1.0:
            raise ValueError("credibility must lie in (0, 1)")

    def __call__(self, p: float) -> float:
        return relative_error(p, self.N, self.credibility)


def relative_error(p: float, N: float, credibility: float = CREDIBILITY) -> float:
    """Relative error of a quantile estimated as the ``round(p N)``-th of ``N`` draws.

    The ``(1 - c)/2`` and ``(1 + c)/2`` quantiles of ``Beta(k, N + 1 - k)``
    bound the true level; the larger distance from `p` is returned relative
    to `p`.
    """
    N = float(N)
    if not (N >= 1 and 1.0 / N <= p <= 1.0 - 1.0 / N):
        raise ValueError(f"p={p} outside the estimable range [1/N, 1 - 1/N] for N={N:g}")
    lo, hi = _credible_interval(round(p * N), N, credibility)
    return max(abs(lo - p), abs(hi - p)) / p


@lru_cache(maxsize=65536)
def _credible_interval(k: int, N: float, credibility: float) -> tuple[float, float]:
    a, b = float(k), N + 1.0 - k
    alpha = 0.5 * (1.0 - credibility)
    return beta_quantile(a, b, alpha), beta_quantile(a, b, 1.0 - alpha)


def required_samples(p: float, delta: float, credibility: float = CREDIBILITY) -> int:
    """Smallest ``N`` (to 1% in ``N``) whose relative error at `p` is at most `delta`."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    lo = math.ceil(max(1.0 / p, 1.0 / (1.0 - p)))

    def ok(N):
        return relative_error(p, N, credibility) <= delta

    if ok(lo):
        return lo
    hi = lo
    while not ok(hi):
        lo = hi
        hi *= 2
        if hi > N_LIMIT:
            raise ValueError(f"relative error {delta} at p={p} needs more than {N_LIMIT:g} samples")
    while hi > lo * (1.0 + GRANULARITY):
        mid = int(round(math.sqrt(lo * hi)))
        if mid in (lo, hi):
            break
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return int(hi)


def calibration_allowance(N: int, alpha: float = 0.01) -> float:
    """Tolerance added to a uniformity KS critical value for a table built from `N` draws.

    The tabulated CDF is itself an empirical estimate; the DKW bound at
    level `alpha` limits its sup-distance from the true CDF.
    """
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * N))


def default_table_path(statistic: str = "rps_star") -> Path:
    """Bundled table for `statistic`, unless ``RPSTEST_TABLE`` names another file."""
    override = os.environ.get(TABLE_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("rpstest") / "data" / f"{statistic}_table.json"))


@lru_cache(maxsize=8)
def _load_cached(path: str, mtime: float) -> FittedTable:
    return FittedTable.load(path)


def load_table(path=None, statistic: str = "rps_star") -> FittedTable:
    path = Path(path) if path is not None else default_table_path(statistic)
    if not path.exists():
        raise TableNotFoundError(
            f"no table at {path}; build one with 'rpstest tabulate' and 'rpstest fit'"
        )
    table = _load_cached(str(path), path.stat().st_mtime)
    if table.statistic != statistic:
        raise ValueError(f"{path} holds a {table.statistic} table, not {statistic}")
    return table


_CDF_CACHE: dict[tuple[int, int], tuple[FittedTable, CdfModel]] = {}


def _cdf(table: FittedTable, n: int) -> CdfModel:
    key = (id(table), n)
    hit = _CDF_CACHE.get(key)
    if hit is None or hit[0] is not table:
        if len(_CDF_CACHE) > 4096:
            _CDF_CACHE.clear()
        hit = (table, build_cdf(table, n))
        _CDF_CACHE[key] = hit
    return hit[1]


def pvalue(
    statistic_value: float,
    n: int,
    table: FittedTable | None = None,
    model: ErrorModel | None = None,
    statistic: str = "rps_star",
    two_sided: bool = False,
) -> TestResult:
    """p-value of an observed statistic for a sample of size `n`.

    ``n = 1`` uses the closed-form CDF (error 0); larger ``n`` use the
    fitted table, clamping to the tabulated range and flagging the result
    as saturated when the observation lies at or beyond it.
    """
    n = int(n)
    x = float(statistic_value)
    if statistic not in ANCHORS:
        raise ValueError(f"no p-value table format for {statistic!r}")
    if statistic == "rps_star" and not 0.0 < x <= 1.0:
        raise ValueError(f"RPS* must lie in (0, 1], got {x}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if n == 1:
        cdf, _ = ANCHORS[statistic]
        F = cdf(x)
        error, saturated = 0.0, False
    else:
        table = load_table(statistic=statistic) if table is None else table
        if table.statistic != statistic:
            raise ValueError(f"table is for {table.statistic}, not {statistic}")
        if n > table.n_max:
            raise TableNotFoundError(
                f"n={n} exceeds the table's largest n={table.n_max}; "
                "extend it with 'rpstest tabulate' and 'rpstest fit'"
            )
        F, saturated = _cdf(table, n).evaluate(x)
        error = None
    F = float(F)
    if two_sided:
        p = min(1.0, 2.0 * min(F, 1.0 - F))
    elif tail(statistic) == "lower":
        p = F
    else:
        p = 1.0 - F
    if error is None:
        model = model or ErrorModel(table.N)
        q = min(max(p, 1.0 / model.N), 1.0 - 1.0 / model.N)
        error = model(q)
    return TestResult(x, p, float(error), bool(saturated), n, statistic)


def _null_cdf(dist) -> Callable[[np.ndarray], np.ndarray]:
    if callable(dist):
        return dist
    if dist == "uniform":
        return lambda x: x
    if dist == "exponential":
        return lambda x: -np.expm1(-x)
    raise ValueError(f"unknown null distribution {dist!r}")


def compute_statistic(sample, statistic: str = "rps_star") -> float:
    if statistic == "rps_star":
        return kernels.rps_star(sample)
    if statistic == "rss":
        return kernels.rss(sample)
    raise ValueError(f"unsupported statistic {statistic!r}")


def rps_test(
    data,
    dist="uniform",
    statistic: str = "rps_star",
    policy: str = "strict",
    table: FittedTable | None = None,
    two_sided: bool = False,
) -> TestResult:
    """Test `data` against a continuous null distribution.

    `dist` is ``"uniform"``, ``"exponential"`` or any vectorised CDF.
    """
    sample = kernels.pit_transform(data, _null_cdf(dist), policy=policy)
    value = compute_statistic(sample, statistic)
    return pvalue(value, sample.n, table=table, statistic=statistic, two_sided=two_sided)


def pvalue_array(values, n: int, table: FittedTable | None = None, statistic: str = "rps_star"):
    """Vectorised one-sided p-values without error bands: ``(p, saturated)``."""
    values = np.asarray(values, dtype=np.float64)
    n = int(n)
    if n == 1:
        cdf, _ = ANCHORS[statistic]
        F, sat = cdf(values), np.zeros(values.shape, dtype=bool)
    else:
        table = load_table(statistic=statistic) if table is None else table
        if n > table.n_max:
            raise TableNotFoundError(f"n={n} exceeds the table's largest n={table.n_max}")
        F, sat = _cdf(table, n).evaluate(values)
    F = np.asarray(F, dtype=np.float64)
    p = F if tail(statistic) == "lower" else 1.0 - F
    return p, np.asarray(sat)

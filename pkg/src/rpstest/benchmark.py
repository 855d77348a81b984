"""Power studies: localized-signal benchmarks and the bump-hunt demo.

Two generative families are provided.

``H^K(n, s, w)``
    ``n - round(s n)`` uniform points plus ``round(s n)`` points uniform on
    ``[D, D + w]``, with the offset ``D ~ U(0, 1 - w)`` drawn once per trial.
Bump hunt
    A Poisson number of ``Exp(1)`` background events plus a Poisson number
    of ``N(1, 0.05)`` signal events, tested against the background-only
    hypothesis through ``F_B(x) = 1 - exp(-x)``.

Trial ``t`` of a scenario always uses the Philox stream keyed by
``(seed, t)``, so results do not depend on the order or process in which
trials run.  All tests see the same sample in a given trial.
"""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import kstwo, norm

from rpstest import __version__
from rpstest.batch import STATISTICS, batch_statistic
from rpstest.kernels import DegenerateSampleError, OrderedSample, pit_transform, rps_star, rss
from rpstest.pvalue import calibration_allowance, load_table, pvalue_array
from rpstest.tabulation import simulate

DEFAULT_TESTS = ("rps", "ks", "ad", "cvm", "moran")
REFERENCE_TRIALS = 20_000
REFERENCE_SEED = 314159


@dataclass(frozen=True)
class BenchmarkScenario:
    n: int
    s: float
    w: float
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0.0 <= self.s <= 1.0:
            raise ValueError("s must lie in [0, 1]")
        if not 0.0 < self.w <= 1.0:
            raise ValueError("w must lie in (0, 1]")

    @property
    def n_signal(self) -> int:
        # half-up rounding to the closest integer
        return int(math.floor(self.s * self.n + 0.5))


@dataclass(frozen=True)
class BumpHuntScenario:
    nb_mean: float = 100.0
    ns_mean: float = 0.0
    signal_mu: float = 1.0
    signal_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.nb_mean < 0 or self.ns_mean < 0:
            raise ValueError("expected counts must be non-negative")
        if self.signal_sigma <= 0:
            raise ValueError("signal width must be positive")


@dataclass
class TrialSummary:
    test: str
    median_p: float
    p_samples: np.ndarray = field(repr=False)
    auc: float | None = None
    dropped: int = 0
    params: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return int(self.p_samples.size)


def trial_generator(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(trial,)))
    )


def generate_hk(scenario: BenchmarkScenario, trial: int = 0) -> OrderedSample:
    """One sorted sample from ``H^K(n, s, w)``."""
    rng = trial_generator(scenario.seed, trial)
    k = scenario.n_signal
    offset = rng.uniform(0.0, 1.0 - scenario.w)
    background = rng.random(scenario.n - k)
    signal = offset + scenario.w * rng.random(k)
    return OrderedSample(np.sort(np.concatenate([background, signal])))


def generate_bumphunt(scenario: BumpHuntScenario, trial: int = 0) -> OrderedSample | None:
    """One bump-hunt sample on the unit interval, or None when no events were drawn."""
    rng = trial_generator(scenario.seed, trial)
    nb = int(rng.poisson(scenario.nb_mean))
    ns = int(rng.poisson(scenario.ns_mean))
    background = rng.exponential(1.0, nb)
    signal = rng.normal(scenario.signal_mu, scenario.signal_sigma, ns)
    neg = signal < 0.0
    while neg.any():
        signal[neg] = rng.normal(scenario.signal_mu, scenario.signal_sigma, int(neg.sum()))
        neg = signal < 0.0
    events = np.concatenate([background, signal])
    if events.size == 0:
        return None
    return pit_transform(events, lambda x: -np.expm1(-x))


@lru_cache(maxsize=1024)
def reference_null(statistic: str, n: int, trials: int = REFERENCE_TRIALS,
                   seed: int = REFERENCE_SEED) -> np.ndarray:
    """Sorted Monte Carlo null sample of an upper-tail statistic."""
    return simulate(statistic, n, trials, seed).sorted_values


def mc_pvalue(statistic: str, value: float, n: int, trials: int = REFERENCE_TRIALS,
              seed: int = REFERENCE_SEED) -> float:
    """``(1 + #{null >= value}) / (trials + 1)``."""
    null = reference_null(statistic, n, trials, seed)
    exceed = null.size - np.searchsorted(null, value, side="left")
    return (1.0 + exceed) / (null.size + 1.0)


def _statistic(name: str, sample: OrderedSample) -> float:
    return float(batch_statistic(name, sample.values[None, :])[0])


class TestSuite:
    """Named p-value functions evaluated on one sample.

    ``rps`` and ``rss`` use fitted tables, ``ks`` the exact Kolmogorov
    distribution, and every other registered statistic a Monte Carlo null
    of `reference_trials` samples.
    """

    __test__ = False

    def __init__(self, names: Sequence[str] = DEFAULT_TESTS, table=None, rss_table=None,
                 reference_trials: int = REFERENCE_TRIALS, reference_seed: int = REFERENCE_SEED):
        self.names = list(names)
        for name in self.names:
            if name not in ("rps", "rss", "ks") and name not in STATISTICS:
                raise ValueError(f"unknown test {name!r}")
        self._table = table
        self._rss_table = rss_table
        self.reference_trials = reference_trials
        self.reference_seed = reference_seed

    @property
    def table(self):
        if self._table is None:
            self._table = load_table(statistic="rps_star")
        return self._table

    @property
    def rss_table(self):
        if self._rss_table is None:
            self._rss_table = load_table(statistic="rss")
        return self._rss_table

    def pvalue(self, name: str, sample: OrderedSample) -> float:
        n = sample.n
        if name == "rps":
            return float(pvalue_array(rps_star(sample), n, self.table, "rps_star")[0])
        if name == "rss":
            return float(pvalue_array(rss(sample), n, self.rss_table, "rss")[0])
        if name == "ks":
            return float(kstwo.sf(_statistic("ks", sample), n))
        value = _statistic(name, sample)
        if not math.isfinite(value):
            raise DegenerateSampleError(f"{name} is not finite on this sample")
        return mc_pvalue(name, value, n, self.reference_trials, self.reference_seed)

    def allowance(self) -> float:
        """DKW half-width at 99% for the Monte Carlo reference nulls."""
        return calibration_allowance(self.reference_trials)


def lower_median(values) -> float:
    """Median, taking the lower middle element for an even count."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return math.nan
    return float(v[(v.size - 1) // 2])


def roc_auc(p_null, p_alt) -> float:
    """Probability that an alternative p-value is below a null one, ties half."""
    null = np.sort(np.asarray(p_null, dtype=np.float64))
    alt = np.asarray(p_alt, dtype=np.float64)
    if null.size == 0 or alt.size == 0:
        raise ValueError("both p-value lists must be non-empty")
    above = null.size - np.searchsorted(null, alt, side="right")
    ties = np.searchsorted(null, alt, side="right") - np.searchsorted(null, alt, side="left")
    return float((above.sum() + 0.5 * ties.sum()) / (null.size * alt.size))


def run_trials(generate: Callable[[int], OrderedSample | None], suite: TestSuite,
               trials: int) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    """p-values per test over `trials` draws; failing trials are dropped per test."""
    ps = {name: [] for name in suite.names}
    dropped = {name: 0 for name in suite.names}
    for t in range(trials):
        sample = generate(t)
        for name in suite.names:
            if sample is None:
                dropped[name] += 1
                continue
            try:
                ps[name].append(suite.pvalue(name, sample))
            except (DegenerateSampleError, ValueError, FileNotFoundError):
                dropped[name] += 1
    return {k: np.asarray(v) for k, v in ps.items()}, dropped


def _summaries(ps, dropped, params, null=None) -> list[TrialSummary]:
    out = []
    for name, p in ps.items():
        auc = None
        if null is not None and p.size and null[name].size:
            auc = roc_auc(null[name], p)
        out.append(TrialSummary(name, lower_median(p), p, auc, dropped[name], dict(params)))
    return out


def _hk_point(args):
    n, s, w, seed, trials, suite = args
    sc = BenchmarkScenario(n, s, w, seed)
    return run_trials(lambda t: generate_hk(sc, t), suite, trials)


def _bump_point(args):
    nb, ns, seed, trials, suite = args
    sc = BumpHuntScenario(nb, ns, seed=seed)
    return run_trials(lambda t: generate_bumphunt(sc, t), suite, trials)


def _map(fn, tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def median_pvalue_scan(suite: TestSuite, n_values, s_values, w_values, trials: int = 400,
                       seed: int = 0, workers: int = 1) -> list[TrialSummary]:
    """Median p-value and ROC AUC for every ``(n, s, w)`` and test.

    The AUC compares each point with the ``s = 0`` trials at the same ``n``.
    """
    if workers > 1:
        # load tables once so worker processes receive them by value
        for name in suite.names:
            if name in ("rps", "rss"):
                getattr(suite, "table" if name == "rps" else "rss_table")
    nulls = dict(zip(n_values, _map(_hk_point, [(n, 0.0, 1.0, seed, trials, suite) for n in n_values], workers)))
    points = [(n, s, w) for n in n_values for s in s_values for w in w_values]
    results = _map(_hk_point, [(n, s, w, seed, trials, suite) for n, s, w in points], workers)
    out = []
    for (n, s, w), (ps, dropped) in zip(points, results):
        out.extend(_summaries(ps, dropped, {"n": n, "s": s, "w": w}, nulls[n][0]))
    return out


def bumphunt_scan(suite: TestSuite, ns_values, nb_mean: float = 100.0, trials: int = 1000,
                  seed: int = 0, workers: int = 1) -> list[TrialSummary]:
    """Median p-value per test for each expected signal count."""
    if workers > 1:
        for name in suite.names:
            if name in ("rps", "rss"):
                getattr(suite, "table" if name == "rps" else "rss_table")
    ns_values = list(ns_values)
    results = _map(_bump_point, [(nb_mean, ns, seed, trials, suite) for ns in ns_values], workers)
    null_ps = None
    if 0 in ns_values or 0.0 in ns_values:
        null_ps = results[ns_values.index(0)][0]
    out = []
    for ns, (ps, dropped) in zip(ns_values, results):
        out.extend(_summaries(ps, dropped, {"nb_mean": nb_mean, "ns_mean": ns}, null_ps))
    return out


def sigma_threshold(level: float) -> float:
    """Two-sided tail probability of a ``level``-sigma normal deviation."""
    return float(2.0 * norm.sf(level))


def sensitivity_crossing(ns_values, medians, level: float = 2.0) -> float:
    """Signal strength where the median p-value first falls below the threshold.

    Interpolates linearly in p between the bracketing scan points and returns
    ``inf`` when no scanned point crosses.
    """
    thr = sigma_threshold(level)
    ns_values = np.asarray(ns_values, dtype=np.float64)
    medians = np.asarray(medians, dtype=np.float64)
    below = np.flatnonzero(medians < thr)
    if below.size == 0:
        return math.inf
    i = int(below[0])
    if i == 0:
        return float(ns_values[0])
    x0, x1 = ns_values[i - 1], ns_values[i]
    m0, m1 = medians[i - 1], medians[i]
    return float(x0 + (thr - m0) * (x1 - x0) / (m1 - m0))


def crossings(summaries: list[TrialSummary], level: float = 2.0) -> dict[str, float]:
    out = {}
    for name in dict.fromkeys(s.test for s in summaries):
        rows = sorted((s for s in summaries if s.test == name), key=lambda s: s.params["ns_mean"])
        out[name] = sensitivity_crossing(
            [r.params["ns_mean"] for r in rows], [r.median_p for r in rows], level
        )
    return out


def summaries_csv(summaries: list[TrialSummary], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*columns, "test", "median_p", "auc", "trials", "dropped"])
    for s in summaries:
        writer.writerow([
            *(repr(s.params[c]) if isinstance(s.params[c], float) else s.params[c] for c in columns),
            s.test,
            repr(s.median_p),
            "" if s.auc is None else repr(s.auc),
            s.trials,
            s.dropped,
        ])
    return buf.getvalue()


def manifest(kind: str, suite: TestSuite, seed: int, trials: int, **extra) -> str:
    doc = {
        "kind": kind,
        "software": {"rpstest": __version__, "numpy": np.__version__},
        "seed": seed,
        "trials": trials,
        "tests": suite.names,
        "reference_trials": suite.reference_trials,
        "reference_seed": suite.reference_seed,
        **extra,
    }
    if "rps" in suite.names:
        doc["table"] = {"N": suite.table.N, "n_max": suite.table.n_max,
                        "seeds": suite.table.meta.get("seeds", [])}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rpstest.benchmark import (
    BenchmarkScenario,
    BumpHuntScenario,
    TestSuite,
    bumphunt_scan,
    crossings,
    generate_bumphunt,
    generate_hk,
    lower_median,
    manifest,
    mc_pvalue,
    median_pvalue_scan,
    roc_auc,
    run_trials,
    sensitivity_crossing,
    sigma_threshold,
    summaries_csv,
    trial_generator,
)
from rpstest.pvalue import calibration_allowance


class TestGenerators:
    def test_null_is_plain_uniform(self):
        sc = BenchmarkScenario(40, 0.0, 0.3, seed=5)
        x = generate_hk(sc, 3).values
        assert x.size == 40 and np.all(np.diff(x) > 0)
        assert 0 < x[0] and x[-1] < 1

    def test_full_signal_stays_in_window(self):
        sc = BenchmarkScenario(25, 1.0, 0.1, seed=1)
        for t in range(50):
            x = generate_hk(sc, t).values
            assert x[-1] - x[0] <= 0.1

    @given(st.integers(1, 500), st.floats(0, 1))
    def test_counts_conserved(self, n, s):
        sc = BenchmarkScenario(n, s, 0.2, seed=0)
        assert 0 <= sc.n_signal <= n
        assert abs(sc.n_signal - s * n) <= 0.5
        assert generate_hk(sc, 0).n == n

    def test_rounding_is_half_up(self):
        assert BenchmarkScenario(10, 0.25, 0.1).n_signal == 3
        assert BenchmarkScenario(10, 0.35, 0.1).n_signal == 4

    def test_mixture_mass(self):
        n, trials, s, w = 20, 10_000, 0.5, 0.25
        sc = BenchmarkScenario(n, s, w, seed=8)
        inside = 0
        for t in range(trials):
            offset = trial_generator(sc.seed, t).uniform(0.0, 1.0 - w)
            x = generate_hk(sc, t).values
            inside += np.count_nonzero((x >= offset) & (x <= offset + w))
        total = n * trials
        want = s + (1 - s) * w
        # only the background points are random given the offset
        sd = math.sqrt((1 - s) * total * w * (1 - w))
        assert abs(inside - want * total) < 3 * sd

    def test_invalid_scenarios(self):
        with pytest.raises(ValueError):
            BenchmarkScenario(10, 1.5, 0.1)
        with pytest.raises(ValueError):
            BenchmarkScenario(10, 0.5, 0.0)
        with pytest.raises(ValueError):
            BumpHuntScenario(-1.0)

    def test_bumphunt_counts(self):
        sc = BumpHuntScenario(100.0, 10.0, seed=3)
        counts = np.array([generate_bumphunt(sc, t).n for t in range(10_000)])
        assert abs(counts.mean() - 110.0) < 3 * math.sqrt(110.0 / counts.size)

    def test_bumphunt_signal_location(self):
        sc = BumpHuntScenario(0.0, 2000.0, seed=4)
        x = generate_bumphunt(sc, 0).values
        assert x.mean() == pytest.approx(1 - math.exp(-1), abs=0.002)
        assert x.std() == pytest.approx(0.05 * math.exp(-1), rel=0.05)

    def test_bumphunt_empty_trial(self):
        assert generate_bumphunt(BumpHuntScenario(0.0, 0.0), 0) is None

    def test_trials_are_independent_of_order(self):
        sc = BenchmarkScenario(30, 0.2, 0.1, seed=9)
        a = [generate_hk(sc, t).values for t in (0, 1, 2)]
        b = [generate_hk(sc, t).values for t in (2, 1, 0)][::-1]
        assert all(np.array_equal(u, v) for u, v in zip(a, b))


class TestMetrics:
    def test_auc_examples(self):
        assert roc_auc([0.1, 0.4, 0.7], [0.1, 0.4, 0.7]) == 0.5
        assert roc_auc([0.5, 0.9], [0.01, 0.2]) == 1.0
        assert roc_auc([0.2, 0.8], [0.1, 0.5]) == 0.75

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_auc_against_pair_count(self, null, alt):
        wins = sum((a < b) + 0.5 * (a == b) for a in alt for b in null)
        assert roc_auc(null, alt) == pytest.approx(wins / (len(null) * len(alt)), abs=1e-12)

    def test_auc_requires_data(self):
        with pytest.raises(ValueError):
            roc_auc([], [0.1])

    def test_lower_median(self):
        assert lower_median([0.3]) == 0.3
        assert lower_median([0.4, 0.1, 0.3, 0.2]) == 0.2
        assert lower_median([0.5, 0.1, 0.3]) == 0.3
        assert math.isnan(lower_median([]))

    def test_sigma_threshold(self):
        assert sigma_threshold(2.0) == pytest.approx(0.0455, abs=1e-4)
        assert sigma_threshold(0.0) == 1.0

    def test_crossing(self):
        ns = [0, 2, 4, 6]
        med = [0.5, 0.2, 0.0455 * 0.5, 0.001]
        thr = sigma_threshold(2.0)
        want = 2 + (thr - 0.2) * 2 / (0.0455 * 0.5 - 0.2)
        assert sensitivity_crossing(ns, med) == pytest.approx(want)
        assert sensitivity_crossing(ns, [0.5, 0.4, 0.3, 0.2]) == math.inf
        assert sensitivity_crossing(ns, med, level=0.0) == 0.0

    def test_mc_pvalue_bounds(self):
        assert mc_pvalue("moran", -1e9, 10, trials=1000, seed=1) == 1.0
        assert mc_pvalue("moran", 1e9, 10, trials=1000, seed=1) == pytest.approx(1 / 1001)


@pytest.fixture(scope="module")
def suite(table, rss_table):
    return TestSuite(("rps", "rss", "ks", "ad", "cvm", "moran", "greenwood"), table=table, rss_table=rss_table)


class TestNullCalibration:
    def test_every_test_is_calibrated(self, suite):
        trials, n = 10_000, 30
        sc = BenchmarkScenario(n, 0.0, 1.0, seed=77)
        ps, dropped = run_trials(lambda t: generate_hk(sc, t), suite, trials)
        critical = stats.kstwo.ppf(0.99, trials)
        for name, p in ps.items():
            assert dropped[name] == 0
            assert np.all((p >= 0) & (p <= 1))
            if name in ("rps", "rss"):
                allowance = calibration_allowance(suite.table.N)
            elif name == "ks":
                allowance = 0.0
            else:
                allowance = suite.allowance()
            D = stats.kstest(p, "uniform").statistic
            assert D < critical + allowance, name

    def test_bumphunt_null(self, suite):
        trials = 2000
        sc = BumpHuntScenario(100.0, 0.0, seed=12)
        ps, _ = run_trials(lambda t: generate_bumphunt(sc, t), TestSuite(("rps", "ks"), table=suite.table), trials)
        for p in ps.values():
            assert stats.kstest(p, "uniform").statistic < stats.kstwo.ppf(0.99, trials) + calibration_allowance(suite.table.N)


class TestScans:
    def test_null_medians_near_half(self, suite):
        trials = 400
        out = median_pvalue_scan(suite, [30], [0.0], [0.5], trials=trials, seed=1)
        for s in out:
            assert abs(s.median_p - 0.5) < 5 * 0.5 / math.sqrt(trials)
            assert s.auc == 0.5

    def test_single_trial_median(self, suite):
        out = median_pvalue_scan(TestSuite(("rps",), table=suite.table), [10], [0.2], [0.1], trials=1, seed=3)
        assert out[0].median_p == out[0].p_samples[0]

    def test_ordering_for_narrow_signals(self, suite):
        narrow = TestSuite(("rps", "ks", "moran"), table=suite.table)
        out = median_pvalue_scan(narrow, [30, 100], [0.15, 0.3], [0.05, 0.1], trials=200, seed=21)
        by_point = {}
        for s in out:
            by_point.setdefault((s.params["n"], s.params["s"], s.params["w"]), {})[s.test] = s.median_p
        # a median clamped at the table floor only says p <= p_min
        floor = suite.table.p_grid[0]
        for point, med in by_point.items():
            assert med["rps"] <= max(med["ks"], floor), point
            assert med["rps"] <= max(med["moran"], floor), point

    def test_deterministic_across_workers(self, suite):
        small = TestSuite(("rps", "ks", "cvm"), table=suite.table, reference_trials=2000)
        kw = dict(n_values=[10, 20], s_values=[0.2], w_values=[0.1], trials=30, seed=5)
        a = summaries_csv(median_pvalue_scan(small, **kw), ["n", "s", "w"])
        b = summaries_csv(median_pvalue_scan(small, **kw, workers=2), ["n", "s", "w"])
        assert a == b
        assert a.splitlines()[0] == "n,s,w,test,median_p,auc,trials,dropped"

    def test_bumphunt_scan_and_crossings(self, suite):
        small = TestSuite(("rps", "ks"), table=suite.table)
        out = bumphunt_scan(small, [0, 20, 40], trials=50, seed=2)
        assert {s.params["ns_mean"] for s in out} == {0, 20, 40}
        cross = crossings(out)
        assert set(cross) == {"rps", "ks"}
        assert all(c > 0 for c in cross.values())
        again = bumphunt_scan(small, [0, 20, 40], trials=50, seed=2)
        cols = ["nb_mean", "ns_mean"]
        assert summaries_csv(out, cols) == summaries_csv(again, cols)

    def test_manifest_is_stable(self, suite):
        small = TestSuite(("rps", "ks"), table=suite.table)
        a = manifest("benchmark", small, 4, 100, grid={"n": [10]})
        assert a == manifest("benchmark", small, 4, 100, grid={"n": [10]})
        assert '"seed": 4' in a

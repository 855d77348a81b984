import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rpstest import exact, tabulation
from rpstest.tabulation import (
    SimulationSet,
    bootstrap_moments,
    make_ngrid,
    order_statistic_weights,
    order_statistic_window,
    simulate,
)


def make_set(values, statistic="rps_star", n=3, seed=0):
    v = np.sort(np.asarray(values, dtype=np.float64))
    return SimulationSet(statistic, n, v.size, seed, 1, v)


class TestWeights:
    def test_two_point_examples(self):
        assert [order_statistic_weights(1, 2, i) for i in (1, 2)] == pytest.approx([0.75, 0.25], abs=1e-15)
        assert [order_statistic_weights(2, 2, i) for i in (1, 2)] == pytest.approx([0.25, 0.75], abs=1e-15)

    def test_window_matches_examples(self):
        assert order_statistic_window(1, 2)[1] == pytest.approx([0.75, 0.25], abs=1e-15)
        assert order_statistic_window(2, 2)[1] == pytest.approx([0.25, 0.75], abs=1e-15)

    def test_out_of_range(self):
        for k, i in ((0, 1), (3, 1), (1, 0), (1, 3)):
            with pytest.raises(ValueError):
                order_statistic_weights(k, 2, i)
        with pytest.raises(ValueError):
            order_statistic_window(0, 5)

    @given(st.integers(1, 400), st.data())
    def test_full_weights_sum_to_one(self, N, data):
        k = data.draw(st.integers(1, N))
        total = math.fsum(order_statistic_weights(k, N, i) for i in range(1, N + 1))
        assert total == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("k,N", [(1, 1000), (37, 1000), (500, 1000), (1000, 1000), (100, 10**6), (500_000, 10**6)])
    def test_window_against_full_weights(self, k, N):
        lo, w = order_statistic_window(k, N)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w >= 0)
        if N <= 1000:
            full = np.array([order_statistic_weights(k, N, i) for i in range(1, N + 1)])
            padded = np.zeros(N)
            padded[lo - 1 : lo - 1 + w.size] = w
            # dropped mass is below the truncation floor per entry
            assert np.abs(padded - full).max() < 1e-13
        else:
            for j in (0, w.size // 3, w.size // 2, w.size - 1):
                direct = order_statistic_weights(k, N, lo + j)
                if direct >= tabulation.WEIGHT_FLOOR:
                    assert w[j] == pytest.approx(direct, rel=1e-9, abs=1e-15)

    def test_window_is_concentrated(self):
        lo, w = order_statistic_window(500_000, 10**6)
        assert w.size < 20_000


class TestBootstrapMoments:
    def test_two_point_example(self):
        m = bootstrap_moments(make_set([0.0, 1.0]), [0.5])
        assert m.k.tolist() == [1]
        assert m.mu[0] == pytest.approx(0.25, abs=1e-15)
        assert m.sigma[0] == pytest.approx(math.sqrt(0.75 * 0.0625 + 0.25 * 0.5625), abs=1e-15)
        assert m.sigma[0] == pytest.approx(0.4330, abs=1e-4)

    def test_constant_set(self):
        m = bootstrap_moments(make_set(np.full(2000, 0.37)), [0.01, 0.5, 0.99])
        assert np.all(m.mu == pytest.approx(0.37, abs=1e-15))
        assert np.all(m.sigma < 1e-14)

    def test_rounds_to_k_over_N(self):
        m = bootstrap_moments(make_set(np.linspace(0, 1, 1000)), [0.01234, 0.5, 0.5004])
        assert m.k.tolist() == [12, 500]
        assert m.p_grid.tolist() == [0.012, 0.5]

    def test_unreachable_quantile(self):
        with pytest.raises(ValueError):
            bootstrap_moments(make_set(np.linspace(0, 1, 1000)), [1e-4])
        with pytest.raises(ValueError):
            bootstrap_moments(make_set(np.linspace(0, 1, 1000)), [0.9999])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=20, max_size=200), st.floats(0.05, 0.95))
    def test_mean_within_range(self, values, p):
        sim = make_set(values)
        m = bootstrap_moments(sim, [p])
        assert sim.sorted_values[0] - 1e-9 <= m.mu[0] <= sim.sorted_values[-1] + 1e-9
        assert m.sigma[0] >= 0

    def test_against_explicit_bootstrap(self):
        rng = np.random.default_rng(11)
        base = np.sort(rng.exponential(size=1000))
        sim = make_set(base)
        p_grid = [0.01, 0.1, 0.5, 0.9, 0.99]
        m = bootstrap_moments(sim, p_grid)
        R = 10_000
        resampled = np.sort(rng.choice(base, size=(R, base.size), replace=True), axis=1)
        for j, k in enumerate(m.k):
            q = resampled[:, k - 1]
            se_mean = q.std() / math.sqrt(R)
            assert abs(q.mean() - m.mu[j]) < 3 * se_mean
            # std error of a sample std, with the kurtosis of a skewed discrete law
            kurt = np.mean((q - q.mean()) ** 4) / q.var() ** 2
            se_std = q.std() * math.sqrt((kurt - 1) / (4 * R))
            assert abs(q.std() - m.sigma[j]) < 3 * se_std


class TestSimulate:
    def test_deterministic_and_sorted(self):
        a = simulate("rps_star", 5, 3000, seed=7, chunks=3)
        b = simulate("rps_star", 5, 3000, seed=7, chunks=3)
        assert a.sorted_values.tobytes() == b.sorted_values.tobytes()
        assert a.sorted_values.size == 3000
        assert np.all(np.diff(a.sorted_values) >= 0)
        assert 0 <= a.sorted_values[0] and a.sorted_values[-1] <= 1

    def test_seed_changes_output(self):
        a = simulate("rps_star", 5, 1000, seed=7)
        b = simulate("rps_star", 5, 1000, seed=8)
        assert not np.array_equal(a.sorted_values, b.sorted_values)

    def test_workers_do_not_change_output(self):
        a = simulate("rss", 4, 4000, seed=3, chunks=4, workers=1)
        b = simulate("rss", 4, 4000, seed=3, chunks=4, workers=2)
        assert a.sorted_values.tobytes() == b.sorted_values.tobytes()

    def test_rejects_small_N(self):
        with pytest.raises(ValueError):
            simulate("rps_star", 3, 999, seed=1)
        with pytest.raises(ValueError):
            simulate("nope", 3, 1000, seed=1)

    def test_n1_matches_closed_form(self):
        sim = simulate("rps_star", 1, 10**6, seed=2024)
        x = sim.sorted_values
        F = exact.cdf_rps_star_n1(x)
        i = np.arange(1, x.size + 1)
        sup = max(np.max(i / x.size - F), np.max(F - (i - 1) / x.size))
        assert sup < 0.002

    def test_two_seeds_agree_on_median(self):
        N = 20_000
        a = simulate("moran", 10, N, seed=1).sorted_values
        b = simulate("moran", 10, N, seed=2).sorted_values
        iqr = a[int(0.75 * N)] - a[int(0.25 * N)]
        assert abs(np.median(a) - np.median(b)) < 4 * iqr / math.sqrt(N)

    def test_n1_bootstrap_against_analytic_quantiles(self):
        sim = simulate("rps_star", 1, 10**5, seed=5)
        m = bootstrap_moments(sim, tabulation.default_p_grid(p_min=1e-3))
        want = exact.quantile_rps_star_n1(m.p_grid)
        assert np.all(np.abs(m.mu - want) <= 3 * m.sigma + 1e-12)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        sim = simulate("rss", 3, 1500, seed=9, chunks=2)
        path = tmp_path / "x.sim"
        tabulation.save_simulation(path, sim)
        header = tabulation.read_header(path)
        assert header == {"statistic": "rss", "n": 3, "N": 1500, "seed": 9, "chunks": 2}
        back = tabulation.load_simulation(path)
        assert back.sorted_values.tobytes() == sim.sorted_values.tobytes()
        raw = path.read_bytes()
        assert raw[:8] == b"RPSTSIM\x00"
        assert len(raw) == tabulation._HEADER.size + 8 * 1500

    def test_rejects_foreign_files(self, tmp_path):
        bad = tmp_path / "bad.sim"
        bad.write_bytes(b"garbage!" + bytes(40))
        with pytest.raises(ValueError):
            tabulation.read_header(bad)
        short = tmp_path / "short.sim"
        short.write_bytes(b"RPST")
        with pytest.raises(ValueError):
            tabulation.read_header(short)

    def test_tabulate_reuses_and_refuses(self, tmp_path):
        log = []
        kw = dict(N=1000, seed=4, out_dir=tmp_path, p_grid=[0.01, 0.5, 0.99], log=log.append)
        first = tabulation.tabulate("rps_star", [2, 3], **kw)
        assert len(log) == 2
        second = tabulation.tabulate("rps_star", [2, 3], **kw)
        assert len(log) == 2
        for a, b in zip(first, second):
            assert np.array_equal(a.mu, b.mu)
        with pytest.raises(FileExistsError):
            tabulation.tabulate("rps_star", [2], **{**kw, "seed": 5})
        tabulation.tabulate("rps_star", [2], **{**kw, "seed": 5}, force=True)
        assert tabulation.read_header(tmp_path / "rps_star_n0002.sim")["seed"] == 5

    def test_moments_round_trip(self, tmp_path):
        moments = tabulation.tabulate("rss", [2, 4], N=1000, seed=1, out_dir=tmp_path, p_grid=[0.1, 0.9])
        back, doc = tabulation.load_moments(tmp_path / "moments_rss.json")
        assert doc["seed"] == 1 and doc["N"] == 1000
        for a, b in zip(moments, back):
            assert a.n == b.n
            assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma)


class TestNGrid:
    def test_exact_log_spacing(self):
        assert make_ngrid(3, 2, 8) == [2, 4, 8]

    def test_saturation(self):
        assert make_ngrid(99, 2, 100) == list(range(2, 101))

    def test_twenty_values(self):
        g = make_ngrid(20, 2, 100)
        assert len(g) == 20 and g[0] == 2 and g[-1] == 100
        assert all(b > a for a, b in zip(g, g[1:]))

    @given(st.integers(2, 60), st.integers(2, 50), st.integers(1, 2000))
    def test_properties(self, count, n_min, extra):
        n_max = n_min + max(extra, count - 1)
        g = make_ngrid(count, n_min, n_max)
        assert len(g) == count and g[0] == n_min and g[-1] == n_max
        assert all(b > a for a, b in zip(g, g[1:]))

    def test_too_many(self):
        with pytest.raises(ValueError):
            make_ngrid(100, 2, 100)

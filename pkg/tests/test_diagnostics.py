import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from condirt.diagnostics import (
    HellingerEstimate,
    ess,
    expectation_error_bound,
    hellinger_from_log_weights,
    hellinger_from_samples,
    summarize,
    write_histogram_csv,
    write_summary_json,
)

from oracles import gaussian_hellinger_closed_form


class TestHellinger:
    @pytest.mark.parametrize("m2,s2", [(0.0, 1.0), (0.5, 1.0), (0.0, 1.5), (1.0, 0.7)])
    def test_gaussian_pair(self, m2, s2):
        x = np.random.default_rng(0).normal(0, 1, 20_000)
        est = hellinger_from_samples(stats.norm.logpdf(x), stats.norm.logpdf(x, m2, s2))
        exact = gaussian_hellinger_closed_form(0, 1, m2, s2)
        assert abs(est.value - exact) <= max(3 * est.std_error, 0.01)

    def test_identical_is_zero(self):
        lw = np.zeros(100)
        est = hellinger_from_log_weights(lw)
        assert est.value == 0.0 and est.ess == pytest.approx(100)

    @given(c=st.floats(-500, 500))
    def test_normalization_invariant(self, c):
        lw = np.random.default_rng(1).normal(size=50)
        assert hellinger_from_log_weights(lw + c).value == pytest.approx(hellinger_from_log_weights(lw).value,
                                                                           abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_range(self, seed):
        lw = np.random.default_rng(seed).normal(0, 5, 30)
        v = hellinger_from_log_weights(lw).value
        assert 0.0 <= v <= 1.0

    def test_degenerate_marked_unreliable(self):
        est = hellinger_from_log_weights(np.array([0.0, -1000.0, -1000.0, -1000.0]))
        assert not est.reliable and est.ess == pytest.approx(1.0)

    def test_all_zero_weights(self):
        est = hellinger_from_log_weights(np.full(5, -np.inf))
        assert est.value == 1.0 and not est.reliable

    @pytest.mark.parametrize("bad", [np.array([]), np.array([np.nan]), np.array([np.inf])])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            hellinger_from_log_weights(bad)

    def test_callable_form(self):
        x = np.linspace(-1, 1, 11)[:, None]
        est = hellinger_from_samples(lambda s: -s[:, 0] ** 2, lambda s: -s[:, 0] ** 2, x)
        assert est.value == 0.0

    def test_proposal_must_be_finite(self):
        with pytest.raises(ValueError):
            hellinger_from_samples(np.array([0.0, -np.inf]), np.zeros(2))


class TestEss:
    @given(n=st.integers(1, 200), c=st.floats(-100, 100))
    def test_equal_weights(self, n, c):
        assert ess(np.full(n, c)) == pytest.approx(n)

    def test_empty(self):
        assert ess(np.array([])) == 0.0


class TestBound:
    def test_value(self):
        # 4 * 0.05 / (sqrt(2) * 0.5 - 0.2) evaluated by hand.
        assert expectation_error_bound(0.05, 0.5) == pytest.approx(0.2 / (0.5 * 2**0.5 - 0.2), abs=1e-14)
        assert expectation_error_bound(0.05, 0.5) == pytest.approx(0.39439, abs=1e-5)

    def test_zero_eps(self):
        assert expectation_error_bound(0.0, 0.1) == 0.0

    @pytest.mark.parametrize("eps,delta", [(-0.1, 0.5), (0.36, 0.9), (0.1, 0.2), (0.01, 1.5)])
    def test_invalid(self, eps, delta):
        with pytest.raises(ValueError):
            expectation_error_bound(eps, delta)

    @given(eps=st.floats(0.0, 0.1), delta=st.floats(0.5, 1.0))
    def test_monotone(self, eps, delta):
        assert expectation_error_bound(eps, delta) <= expectation_error_bound(eps + 0.01, delta)


class TestOutput:
    def estimates(self):
        return [HellingerEstimate(0.1 * i, 0.01, 100, 50.0, True) for i in range(1, 6)]

    def test_summary(self):
        s = summarize(self.estimates())
        assert s["count"] == 5
        assert s["median"] == pytest.approx(0.3)
        assert s["unreliable"] == 0

    def test_csv_roundtrip_precision(self, tmp_path):
        est = [HellingerEstimate(1 / 3, 1 / 7, 10, 9.5, False)]
        path = tmp_path / "h.csv"
        write_histogram_csv(path, est, np.array([[np.pi, np.e]]))
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["y_id", "hellinger", "std_error", "ess", "reliable", "y1", "y2"]
        assert float(rows[1][1]) == 1 / 3
        assert float(rows[1][5]) == np.pi

    def test_json(self, tmp_path):
        path = tmp_path / "s.json"
        write_summary_json(path, {"a": np.float64(1.5), "b": np.arange(3), "e": self.estimates()[0]})
        data = json.load(open(path))
        assert data["a"] == 1.5 and data["b"] == [0, 1, 2] and data["e"]["n"] == 100

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from medgrpo.normalization import (
    FittingError,
    PercentileStats,
    StatsFormatError,
    StatsInvariantError,
    StatsLookupError,
    StatsTable,
    fit_percentile_stats,
    fit_stats_table,
    load_stats_table,
    normalize,
    normalize_derivative,
    save_stats_table,
)
from medgrpo.tasks import TaskKind

import oracles

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
samples = st.lists(st.floats(min_value=0, max_value=1, allow_nan=False), min_size=4, max_size=60)


class TestFit:
    def test_five_point_grid(self):
        s = fit_percentile_stats([0.0, 0.25, 0.5, 0.75, 1.0])
        assert (s.p25, s.p50, s.p75) == (0.25, 0.5, 0.75)

    def test_constant_sample_uses_floor(self):
        s = fit_percentile_stats([0.3] * 9, iqr_floor=1e-3)
        assert s.p25 == s.p50 == s.p75 == 0.3
        assert s.iqr == 1e-3

    def test_easy_dataset_median(self):
        rng = np.random.default_rng(0)
        xs = rng.beta(5, 5, size=20000)
        assert fit_percentile_stats(xs).p50 == pytest.approx(0.5, abs=0.01)

    @pytest.mark.parametrize("xs", [[0.1, 0.2, 0.3], [0.1, 0.2, math.nan, 0.4], [0.0, math.inf, 0.1, 0.2]])
    def test_fitting_errors(self, xs):
        with pytest.raises(FittingError):
            fit_percentile_stats(xs)

    @settings(max_examples=300, deadline=None)
    @given(samples)
    def test_matches_order_statistic_oracle(self, xs):
        s = fit_percentile_stats(xs)
        for q, got in ((25, s.p25), (50, s.p50), (75, s.p75)):
            assert got == pytest.approx(oracles.order_stat_percentile(xs, q), abs=1e-12)
        assert s.p25 <= s.p50 <= s.p75

    @settings(max_examples=300, deadline=None)
    @given(samples, st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
    def test_single_outlier_moves_median_at_most_one_gap(self, xs, outlier):
        s0 = sorted(xs)
        p0 = fit_percentile_stats(xs).p50
        p1 = fit_percentile_stats(xs + [outlier]).p50
        gaps = np.diff(s0)
        max_gap = float(gaps.max()) if gaps.size else 0.0
        assert abs(p1 - p0) <= max_gap + 1e-12

    def test_minmax_is_not_outlier_robust(self):
        rng = np.random.default_rng(3)
        xs = list(rng.uniform(0, 1, 50))
        x = 0.6
        lo, hi = min(xs), max(xs)
        mm0 = (x - lo) / (hi - lo)
        shifts_minmax, shifts_logistic = [], []
        for out in (10.0, 1e3, 1e6):
            ys = xs + [out]
            shifts_minmax.append(abs((x - min(ys)) / (max(ys) - min(ys)) - mm0))
            shifts_logistic.append(abs(normalize(fit_percentile_stats(ys), x) - normalize(fit_percentile_stats(xs), x)))
        # the logistic shift does not depend on how extreme the outlier is
        assert max(shifts_logistic) - min(shifts_logistic) < 1e-12
        assert max(shifts_logistic) < 0.1
        assert shifts_minmax[0] < shifts_minmax[1] < shifts_minmax[2]
        assert shifts_minmax[-1] > 0.5


class TestNormalize:
    def test_median_is_exactly_half(self):
        s = PercentileStats(0.1, 0.37, 0.6)
        assert normalize(s, 0.37) == 0.5

    def test_symmetric_p75(self):
        s = PercentileStats(0.4, 0.5, 0.6, k=3.0)
        assert normalize(s, 0.6) == pytest.approx(1 / (1 + math.exp(-1.5)), rel=1e-12)
        assert normalize(s, 0.6) == pytest.approx(0.81757, abs=1e-5)

    def test_limits(self):
        s = PercentileStats(0.4, 0.5, 0.6)
        assert 0.999 < normalize(s, 1e6) < 1.0
        assert 0.0 < normalize(s, -1e6) < 1e-3

    def test_rejects_nonfinite(self):
        s = PercentileStats(0.4, 0.5, 0.6)
        for bad in (math.nan, math.inf):
            with pytest.raises(ValueError):
                normalize(s, bad)
            with pytest.raises(ValueError):
                normalize_derivative(s, bad)

    def test_array_input(self):
        s = PercentileStats(0.4, 0.5, 0.6)
        xs = np.array([0.2, 0.5, 0.9])
        out = normalize(s, xs)
        assert out.shape == (3,)
        assert out[1] == 0.5
        assert [normalize(s, float(x)) for x in xs] == pytest.approx(list(out), rel=0, abs=0)

    @pytest.mark.parametrize("p", [(0.5, 0.4, 0.6), (0.1, 0.2, 0.1)])
    def test_invalid_stats(self, p):
        with pytest.raises(StatsInvariantError):
            PercentileStats(*p)

    @pytest.mark.parametrize("kw", [{"k": 0.0}, {"k": -1.0}, {"iqr_floor": 0.0}])
    def test_invalid_k_or_floor(self, kw):
        with pytest.raises(StatsInvariantError):
            PercentileStats(0.1, 0.2, 0.3, **kw)

    @settings(max_examples=300, deadline=None)
    @given(samples, finite, finite)
    def test_monotone_and_bounded(self, xs, a, b):
        s = fit_percentile_stats(xs)
        ra, rb = normalize(s, a), normalize(s, b)
        assert 0.0 < ra < 1.0 and 0.0 < rb < 1.0
        if a < b:
            assert ra <= rb
            za, zb = (s.k * (v - s.p50) / s.iqr for v in (a, b))
            # strict whenever the logits are resolvable and not saturated
            if zb - za > 1e-9 and abs(za) < 30 and abs(zb) < 30:
                assert ra < rb

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(0.001, 0.4), st.floats(0.0, 1.0), st.floats(0.1, 10.0))
    def test_median_fairness_any_entry(self, p50, iqr, frac, k):
        s = PercentileStats(p50 - frac * iqr, p50, p50 + (1 - frac) * iqr, k=k)
        assert abs(normalize(s, p50) - 0.5) <= 1e-12

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(0.01, 0.4), st.floats(-2.0, 2.0))
    def test_matches_closed_form(self, p50, iqr, x):
        s = PercentileStats(p50 - iqr / 2, p50, p50 + iqr / 2)
        assert normalize(s, x) == pytest.approx(oracles.logistic(x, p50, iqr, 3.0), rel=1e-12)


class TestDerivative:
    def test_plug_in_value(self):
        s = PercentileStats(0.4, 0.5, 0.6, k=3.0)
        assert normalize_derivative(s, 0.5) == pytest.approx(3.75, rel=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(0.01, 0.4), st.floats(-4.0, 4.0))
    def test_central_difference(self, p50, iqr, u):
        s = PercentileStats(p50 - iqr / 2, p50, p50 + iqr / 2)
        x = p50 + u * iqr
        fd = oracles.central_difference(lambda v: normalize(s, v), x, 1e-3 * iqr)
        d = normalize_derivative(s, x)
        assert d == pytest.approx(fd, rel=1e-6)
        assert d > 0

    def test_maximal_at_median(self):
        s = PercentileStats(0.1, 0.3, 0.4)
        xs = np.linspace(-1, 2, 301)
        d = normalize_derivative(s, xs)
        assert normalize_derivative(s, 0.3) >= d.max()


def _table():
    return StatsTable({
        ("easy", TaskKind.STG): PercentileStats(0.4, 0.5, 0.6),
        ("hard", TaskKind.STG): PercentileStats(0.08, 0.12, 0.2),
        ("cap", TaskKind.RC, "judge"): PercentileStats(2.0, 3.0, 4.0),
    })


class TestTable:
    def test_lookup_and_missing_key(self):
        t = _table()
        assert t.get("hard", "STG").p50 == 0.12
        assert ("easy", TaskKind.STG) in t
        with pytest.raises(StatsLookupError, match="nowhere"):
            t.get("nowhere", TaskKind.TAG)
        with pytest.raises(StatsLookupError):
            t.get("cap", TaskKind.RC, "similarity")

    def test_k_is_per_table(self):
        with pytest.raises(StatsInvariantError):
            StatsTable({("a", TaskKind.TAG): PercentileStats(0.1, 0.2, 0.3, k=2.0)}, k=3.0)

    def test_fit_table_names_short_key(self):
        rows = [("a", "TAG", 0.1), ("a", "TAG", 0.2), ("a", "TAG", 0.3), ("a", "TAG", 0.4), ("b", "STG", 0.5)]
        with pytest.raises(FittingError, match="b/STG"):
            fit_stats_table(rows)

    def test_roundtrip(self, tmp_path):
        t = _table()
        p = tmp_path / "stats.json"
        save_stats_table(t, p)
        assert load_stats_table(p) == t
        doc = json.loads(p.read_text())
        assert {"dataset", "task", "p25", "p50", "p75", "k", "iqr_floor"} <= set(doc["entries"][0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(samples, min_size=1, max_size=4))
    def test_roundtrip_random(self, groups):
        import tempfile
        from pathlib import Path

        rows = [(f"d{i}", "TAG", x) for i, g in enumerate(groups) for x in g]
        t = fit_stats_table(rows)
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "s.json"
            save_stats_table(t, p)
            assert load_stats_table(p) == t

    def test_load_rejects_inverted_percentiles(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"entries": [{"dataset": "a", "task": "TAG", "p25": 0.5, "p50": 0.4, "p75": 0.6, "k": 3, "iqr_floor": 0.001}]}))
        with pytest.raises(StatsInvariantError):
            load_stats_table(p)

    def test_load_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_stats_table(tmp_path / "missing.json")
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        with pytest.raises(StatsFormatError):
            load_stats_table(p)
        p.write_text(json.dumps({"entries": [{"dataset": "a", "task": "TAG", "p25": 0.1}]}))
        with pytest.raises(StatsFormatError, match="missing"):
            load_stats_table(p)
        row = {"dataset": "a", "task": "TAG", "p25": 0.1, "p50": 0.2, "p75": 0.3, "k": 3, "iqr_floor": 0.001}
        p.write_text(json.dumps({"entries": [row, row]}))
        with pytest.raises(StatsFormatError, match="duplicate"):
            load_stats_table(p)

    def test_missing_key_surfaces_at_query_time(self, tmp_path):
        p = tmp_path / "s.json"
        save_stats_table(_table(), p)
        t = load_stats_table(p)
        with pytest.raises(StatsLookupError):
            t.get("easy", TaskKind.TAG)

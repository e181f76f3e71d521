from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import DATA_DIR, write_csv
from lpmallows.data import (
    PanelDataset,
    build_regimes,
    hp_filter,
    hp_filter_panel,
    load_panel,
    log_diff_100,
    merge_anticipation,
    output_gap,
    parse_period,
    required_edition,
    summary_stats,
    transform_panel,
)
from lpmallows.errors import (
    DuplicateRow,
    InteriorMissing,
    LongFormat,
    MissingColumn,
    MissingForecast,
    MissingRateColumn,
    NonPositiveLevel,
    SeriesTooShort,
    UnparseablePeriod,
)


def small_panel(**series):
    n = len(next(iter(series.values())))
    periods = pd.period_range("2000Q1", periods=n, freq="Q")
    values = {k: np.asarray(v, dtype=float)[None, :] for k, v in series.items()}
    return PanelDataset(("AT",), periods, values, np.ones((1, n), dtype=bool))


# ---------------------------------------------------------------------------
# ingestion


def test_load_small_panel(tmp_path):
    p = write_csv(tmp_path / "p.csv", """
country,period,gdp,rate
BE,2000-Q2,101,3
AT,2000-Q1,100,2
AT,2000-Q2,101,2.5
AT,2000-Q3,,2.25
BE,2000-Q1,99,3
BE,2000-Q3,100,3.5
""")
    panel = load_panel(p)
    assert panel.countries == ("AT", "BE")
    assert [str(x) for x in panel.periods] == ["2000Q1", "2000Q2", "2000Q3"]
    assert len(panel.to_frame()) == 6
    assert np.isnan(panel.grid("gdp")[0, 2])
    assert panel.grid("rate")[1].tolist() == [3.0, 3.0, 3.5]
    assert panel.meta == {"gdp": "level", "rate": "level"}


def test_duplicate_row_names_cell(tmp_path):
    p = write_csv(tmp_path / "p.csv", """
country,period,gdp
AT,1999-Q1,1
AT,1999-Q1,2
""")
    with pytest.raises(DuplicateRow, match="'AT', '1999-Q1'"):
        load_panel(p)


def test_unparseable_period(tmp_path):
    p = write_csv(tmp_path / "p.csv", "country,period,gdp\nAT,1999Q1,1")
    with pytest.raises(UnparseablePeriod, match="1999Q1"):
        load_panel(p)


def test_missing_column(tmp_path):
    p = write_csv(tmp_path / "p.csv", "country,period,gdp\nAT,1999-Q1,1")
    with pytest.raises(MissingColumn, match="cpi"):
        load_panel(p, ["gdp", "cpi"])
    with pytest.raises(MissingColumn):
        load_panel(write_csv(tmp_path / "q.csv", "nation,period,gdp\nAT,1999-Q1,1"))


def test_long_format_rejected(tmp_path):
    p = write_csv(tmp_path / "p.csv", "country,period,variable,value\nAT,1999-Q1,gdp,1")
    with pytest.raises(LongFormat):
        load_panel(p)


def test_schema_mapping_renames(tmp_path):
    p = write_csv(tmp_path / "p.csv", "country,period,GDP_real\nAT,1999-Q1,1\nAT,1999-Q2,2")
    panel = load_panel(p, {"GDP_real": "gdp"})
    assert panel.columns == ("gdp",)


def test_demo_row_counts_match_line_count():
    text = (DATA_DIR / "demo_panel.csv").read_text().splitlines()[1:]
    counts = {}
    for line in text:
        c = line.split(",")[0]
        counts[c] = counts.get(c, 0) + 1
    panel = load_panel(DATA_DIR / "demo_panel.csv")
    assert len(panel.countries) == 11 and len(panel.periods) == 104 and len(panel.columns) == 8
    for i, c in enumerate(panel.countries):
        assert panel.present[i].sum() == counts[c]


# ---------------------------------------------------------------------------
# transforms


def test_log_diff_examples():
    out = log_diff_100([100, 100])
    assert np.isnan(out[0]) and out[1] == 0.0
    assert log_diff_100([100, 102])[1] == pytest.approx(1.980262729617971, abs=1e-6)
    assert log_diff_100([100, 102, 101])[2] == pytest.approx(-0.985229644301, abs=1e-6)
    with pytest.raises(NonPositiveLevel):
        log_diff_100([1.0, 0.0])


@given(arrays(float, st.integers(2, 40), elements=st.floats(1e-3, 1e6)))
def test_log_diff_reconstructs_levels(x):
    d = log_diff_100(x)
    rebuilt = x[0] * np.exp(np.concatenate([[0.0], np.cumsum(d[1:]) / 100.0]))
    np.testing.assert_allclose(rebuilt, x, rtol=1e-10)


def test_transform_panel_tags_and_errors():
    panel = small_panel(gdp=[100, 102, 101], rate=[2.0, 1.5, 1.5])
    out = transform_panel(panel, {"g": ("gdp", "log_diff_100"), "d_rate": ("rate", "diff")})
    assert out.meta["g"] == "log_diff_100" and out.meta["d_rate"] == "diff"
    np.testing.assert_allclose(out.grid("d_rate")[0, 1:], [-0.5, 0.0])
    bad = small_panel(gdp=[100, -1, 101])
    with pytest.raises(NonPositiveLevel, match="'AT', '2000-Q2'"):
        transform_panel(bad, {"gdp": "log_diff_100"})


# ---------------------------------------------------------------------------
# regimes


def test_regime_examples():
    r = build_regimes(small_panel(rate=[2.0, 1.5]))
    assert r.d_i_q[0, 1] == -0.5 and r.ind_q[0, 1] == 1.0
    r = build_regimes(small_panel(rate=[2.0, 2.0]))
    assert r.d_i_q[0, 1] == 0.0 and r.ind_q[0, 1] == 0.0
    r = build_regimes(small_panel(rate=[3, 3, 3, 3, 2]))
    assert r.d_i_a[0, 4] == -1.0 and r.ind_a[0, 4] == 1.0
    assert np.isnan(r.d_i_a[0, :4]).all()
    with pytest.raises(MissingRateColumn):
        build_regimes(small_panel(gdp=[1, 2]), "rate")


@given(arrays(float, st.integers(5, 30), elements=st.floats(-5, 5).map(lambda v: round(v, 2))))
def test_indicators_match_strict_negative_set(rate):
    r = build_regimes(small_panel(rate=rate))
    for d, ind in ((r.d_i_q, r.ind_q), (r.d_i_a, r.ind_a)):
        ok = ~np.isnan(d)
        assert np.array_equal(ind[ok] == 1.0, d[ok] < 0)
        assert np.isnan(ind[~ok]).all()


# ---------------------------------------------------------------------------
# HP filter


def dense_hp(y, lamb):
    n = y.size
    D = np.zeros((n - 2, n))
    for t in range(n - 2):
        D[t, t : t + 3] = [1.0, -2.0, 1.0]
    return np.linalg.solve(np.eye(n) + lamb * D.T @ D, y)


def test_hp_constant_and_linear():
    _, c = hp_filter(np.full(30, 4.2))
    assert np.max(np.abs(c)) < 1e-10
    t = np.arange(120.0)
    _, c = hp_filter(3.0 + 0.25 * t, 1600)
    assert np.max(np.abs(c)) <= 1e-8


def test_hp_matches_dense_oracle(rng):
    y = np.cumsum(rng.standard_normal(100))
    trend, cycle = hp_filter(y, 1600)
    assert np.max(np.abs(trend + cycle - y)) <= 1e-10
    assert np.max(np.abs(trend - dense_hp(y, 1600))) <= 1e-8


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_hp_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    y1, y2 = r.standard_normal(40), r.standard_normal(40)
    lhs = hp_filter(a * y1 + b * y2)[0]
    rhs = a * hp_filter(y1)[0] + b * hp_filter(y2)[0]
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_hp_errors():
    with pytest.raises(SeriesTooShort):
        hp_filter([1.0, 2.0, 3.0])
    with pytest.raises(InteriorMissing):
        hp_filter([1.0, 2.0, np.nan, 3.0, 4.0])
    trend, _ = hp_filter([np.nan, 1.0, 2.0, 3.0, 5.0, np.nan])
    assert np.isnan(trend[0]) and np.isnan(trend[-1])


def test_output_gap_is_percent_cycle(rng):
    level = 100 * np.exp(np.cumsum(0.005 + 0.01 * rng.standard_normal(60)))
    panel = small_panel(gdp=level)
    gap = output_gap(panel, "gdp")
    np.testing.assert_allclose(gap[0], hp_filter(100 * np.log(level))[1], atol=1e-12)
    trend, cycle = hp_filter_panel(panel, "gdp")
    np.testing.assert_allclose(trend + cycle, panel.grid("gdp"), atol=1e-10)


# ---------------------------------------------------------------------------
# anticipation


FORECASTS = pd.DataFrame(
    [["AT", "2004-12", 2005, 1.5], ["AT", "2005-06", 2006, 2.5], ["AT", "2005-12", 2006, 2.0]],
    columns=["country", "edition", "target_year", "value"],
)


def test_required_edition_rule():
    assert required_edition(parse_period("2005-Q2")) == ("2004-12", 2005)
    assert required_edition(parse_period("2005-Q3")) == ("2005-06", 2006)


def test_merge_anticipation_values_and_idempotence():
    panel = small_panel(gdp=[1, 2, 3, 4])
    periods = pd.period_range("2005Q1", periods=4, freq="Q")
    panel = PanelDataset(("AT",), periods, panel.values, panel.present)
    out = merge_anticipation(panel, FORECASTS)
    assert out.grid("gdp_forecast")[0].tolist() == [1.5, 1.5, 2.5, 2.5]
    again = merge_anticipation(out, FORECASTS)
    np.testing.assert_array_equal(again.grid("gdp_forecast"), out.grid("gdp_forecast"))


def test_missing_forecast_names_edition():
    periods = pd.period_range("2005Q1", periods=2, freq="Q")
    panel = PanelDataset(("AT",), periods, {"gdp": np.ones((1, 2))}, np.ones((1, 2), dtype=bool))
    with pytest.raises(MissingForecast, match="2004-12"):
        merge_anticipation(panel, FORECASTS.iloc[1:])
    # outside the window nothing is required
    out = merge_anticipation(panel, FORECASTS.iloc[1:], window=("2006-Q1", None))
    assert np.isnan(out.grid("gdp_forecast")).all()


# ---------------------------------------------------------------------------
# summary statistics


def test_summary_examples():
    panel = transform_panel(small_panel(gdp=[100, 102, 101], c=[5, 5, 5]), {"gdp": "log_diff_100", "c": "diff"})
    s = summary_stats(panel)
    assert s.loc["AT", ("gdp", "mean")] == pytest.approx(0.497517, abs=1e-6)
    assert s.loc["AT", ("c", "sd")] == 0.0


def test_summary_matches_spreadsheet_formulas(rng):
    v = rng.normal(size=20)
    v[[3, 11]] = np.nan
    s = summary_stats(small_panel(x=v))
    obs = v[~np.isnan(v)]
    mean = sum(obs) / len(obs)
    sd = (sum((o - mean) ** 2 for o in obs) / (len(obs) - 1)) ** 0.5
    assert abs(s.loc["AT", ("x", "mean")] - mean) <= 1e-9
    assert abs(s.loc["AT", ("x", "sd")] - sd) <= 1e-9


def test_zero_variance_flag():
    periods = pd.period_range("2000Q1", periods=3, freq="Q")
    g = np.array([[1.0, 1.0, 1.0], [1.0, 2.0, 1.0]])
    panel = PanelDataset(("LU", "LV"), periods, {"epl": g}, np.ones((2, 3), dtype=bool))
    assert panel.zero_variance(["epl"]) == [("LU", "epl")]

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from lpmallows.errors import BandwidthExceedsSample, EmptyInput, MissingRegimeValue, OutOfRangeP
from lpmallows.inference import (
    ADJUST_METHODS,
    PointTest,
    acceptance_proportion,
    adjust_pvalues,
    build_test_report,
    equality_test,
    irf_verdict,
    panel_hac_meat,
    robust_cov,
    zero_test,
)
from lpmallows.mallows import MallowsWeights
from lpmallows.projection import CANDIDATE_FORMS, DesignMatrix, fit_horizon, fit_models
from lpmallows.synthetic import lab_spec


def naive_hac(S, ci, pi, L):
    """Textbook double loop over countries and period pairs."""
    k = S.shape[1]
    out = np.zeros((k, k))
    for c in np.unique(ci):
        rows = np.flatnonzero(ci == c)
        for a in rows:
            for b in rows:
                lag = abs(pi[a] - pi[b])
                if lag <= L:
                    out += (1 - lag / (L + 1)) * np.outer(S[a], S[b])
    return out


def test_hac_matches_double_loop(rng):
    ci = np.repeat([0, 1, 2], 15)
    pi = np.tile(np.arange(15), 3)
    keep = rng.random(45) > 0.2  # gaps inside countries
    S = rng.standard_normal((45, 3))
    for L in (0, 1, 3):
        np.testing.assert_allclose(panel_hac_meat(S[keep], ci[keep], pi[keep], L),
                                   naive_hac(S[keep], ci[keep], pi[keep], L), atol=1e-12)


def test_bandwidth_zero_is_white(rng):
    X = np.column_stack([np.ones(60), rng.standard_normal((60, 2))])
    y = X @ [1, 2, 3] + rng.standard_normal(60) * (1 + X[:, 1] ** 2)
    fit = fit_horizon(DesignMatrix.from_arrays(X, y), bandwidth=0)
    u = fit.resid
    bread = np.linalg.inv(X.T @ X)
    white = bread @ (X.T * u**2) @ X @ bread
    np.testing.assert_allclose(robust_cov(fit, 0).matrix, white, rtol=1e-10, atol=1e-14)


def test_cov_is_symmetric_psd(lab_panel):
    panel, regimes, _ = lab_panel
    fit = fit_models(panel, regimes, lab_spec(), 3, ["E"])["E"]
    m = fit.robust_cov.matrix
    assert np.array_equal(m, m.T)
    assert np.linalg.eigvalsh(m).min() >= -1e-12 * np.abs(m).max()
    assert fit.robust_cov.bandwidth == 3


def test_bandwidth_exceeds_sample(rng):
    fit = fit_horizon(DesignMatrix.from_arrays(rng.standard_normal((5, 1)), rng.standard_normal(5)))
    with pytest.raises(BandwidthExceedsSample):
        robust_cov(fit, 5)


def simulate_coverage(reps, T, bandwidths, ma=(), rho=0.0, seed=0):
    r = np.random.default_rng(seed)
    z = norm.ppf(0.95)
    hits = {L: 0 for L in bandwidths}
    for _ in range(reps):
        e = r.standard_normal(T + 1)
        x = np.empty(T)
        x[0] = e[0]
        for t in range(1, T):
            x[t] = rho * x[t - 1] + e[t]
        eps = r.standard_normal(T + len(ma))
        u = eps[len(ma):].copy()
        for j, th in enumerate(ma, 1):
            u += th * eps[len(ma) - j : len(ma) - j + T]
        y = 0.5 * x + u
        fit = fit_horizon(DesignMatrix.from_arrays(np.column_stack([x, np.ones(T)]), y, ["p", "c"]))
        for L in bandwidths:
            se = np.sqrt(robust_cov(fit, L).matrix[0, 0])
            hits[L] += abs(fit.coef[0] - 0.5) <= z * se
    return {L: h / reps for L, h in hits.items()}


@pytest.mark.slow
def test_coverage_iid():
    cov = simulate_coverage(1000, 5000, [1])
    assert 0.87 <= cov[1] <= 0.93


def test_coverage_ma2_prefers_bandwidth():
    cov = simulate_coverage(300, 400, [0, 2], ma=(0.8, 0.6), rho=0.7, seed=3)
    assert abs(cov[2] - 0.9) < abs(cov[0] - 0.9)


# ---------------------------------------------------------------------------
# point tests


def equalised(fits, delta1=0.8):
    out = {}
    for m, f in fits.items():
        coef = f.coef.copy()
        for role, name in f.design.roles.items():
            if role == "delta1":
                coef[f.names.index(name)] = delta1
            elif role != "delta2":
                coef[f.names.index(name)] = 0.0
        out[m] = type(f)(f.design, coef, f.resid, f.r_factor, f.bandwidth)
    return out


def test_null_configuration_gives_unit_pvalues(lab_panel):
    panel, regimes, _ = lab_panel
    fits = equalised(fit_models(panel, regimes, lab_spec(), 1))
    w = MallowsWeights(1, CANDIDATE_FORMS, np.full(5, 0.2), 0.0, "fixed")
    t = equality_test(fits, w)
    assert np.max(np.abs(t.stat)) < 1e-10 and np.min(t.pvalue) > 1 - 1e-10
    exact = equality_test(fits, {"A": 0.5, "E": 0.5})
    assert np.all(exact.stat == 0.0) and np.all(exact.pvalue == 1.0)
    assert t.acceptance_proportion() == 1.0
    z = zero_test(fits, w)
    np.testing.assert_allclose(z.estimate, 0.8)


def test_equality_estimate_is_weighted_marginal_effect(lab_panel):
    panel, regimes, _ = lab_panel
    fits = fit_models(panel, regimes, lab_spec(), 1)
    w = MallowsWeights(1, CANDIDATE_FORMS, np.array([0.5, 0, 0.5, 0, 0]), 0.0, "fixed")
    t = equality_test(fits, w)
    d = fits["A"].design
    rv = d.regime_values
    a, c = fits["A"], fits["C"]
    manual = 0.5 * (a.term("p") + a.term("p*ind_q") * rv["ind_q"]) + 0.5 * (c.term("p") + c.term("p*d_i_q") * rv["d_i_q"])
    np.testing.assert_allclose(t.estimate, manual, rtol=1e-12)
    np.testing.assert_allclose(t.reference, fits["Baseline"].term("p"))
    assert t.pvalue.shape == (d.T_eff,)
    assert t.labels == d.row_labels()


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 100))
def test_equality_pvalues_scale_free(lab_panel, c):
    panel, regimes, _ = lab_panel
    w = MallowsWeights(1, CANDIDATE_FORMS, np.array([0.3, 0.2, 0.1, 0.1, 0.3]), 0.0, "fixed")
    p0 = equality_test(fit_models(panel, regimes, lab_spec(), 2), w).pvalue
    scaled = panel.with_columns({"y": panel.grid("y") * c})
    p1 = equality_test(fit_models(scaled, regimes, lab_spec(), 2), w).pvalue
    np.testing.assert_allclose(p1, p0, rtol=1e-7, atol=1e-12)


def test_missing_regime_value(lab_panel):
    panel, regimes, _ = lab_panel
    fits = fit_models(panel, regimes, lab_spec(), 1)
    w = {"C": 1.0}
    with pytest.raises(MissingRegimeValue):
        equality_test(fits, w, points={"ind_q": np.zeros(3)})
    t = equality_test(fits, w, points={"d_i_q": np.array([-0.4, 0.23])})
    assert t.pvalue.shape == (2,)


# ---------------------------------------------------------------------------
# proportions and adjustments


def test_acceptance_examples():
    assert acceptance_proportion(np.ones(7)) == 1.0
    assert acceptance_proportion([0.05, 0.5, 0.2, 0.01], 0.1) == 0.5
    assert acceptance_proportion([1e-9, 0.3], 0.0) == 1.0
    with pytest.raises(EmptyInput):
        acceptance_proportion([])
    with pytest.raises(OutOfRangeP):
        adjust_pvalues([0.2, 1.5], "holm")


def test_adjust_hand_oracles():
    p = [0.01, 0.02, 0.03]
    np.testing.assert_allclose(adjust_pvalues(p, "bonferroni"), [0.03, 0.06, 0.09], rtol=1e-15)
    np.testing.assert_allclose(adjust_pvalues(p, "holm"), [0.03, 0.04, 0.04], rtol=1e-15)
    np.testing.assert_allclose(adjust_pvalues(p, "benjamini_yekutieli"), [0.055] * 3, rtol=1e-14)
    np.testing.assert_allclose(adjust_pvalues([0.03, 0.01, 0.02], "holm"), [0.04, 0.03, 0.04], rtol=1e-15)


def test_bonferroni_level_m12():
    level = 0.1 / 12
    assert round(level, 6) == 0.008333
    for p in np.linspace(0.0, 0.02, 41):
        family = np.r_[p, np.ones(11)]
        assert (adjust_pvalues(family, "bonferroni")[0] <= 0.1) == (p <= 0.1 / 12)


@given(arrays(float, st.integers(1, 30), elements=st.floats(0, 1)))
def test_adjustment_invariants(p):
    bonf = adjust_pvalues(p, "bonferroni")
    holm = adjust_pvalues(p, "holm")
    for method in ADJUST_METHODS:
        a = adjust_pvalues(p, method)
        assert np.all(a >= p) and np.all((a >= 0) & (a <= 1))
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(a[order]) >= -1e-15)
    assert np.all(holm <= bonf + 1e-15)


def test_by_fdr_control():
    r = np.random.default_rng(7)
    m, m0, q, reps = 20, 15, 0.1, 2000
    fdp = np.empty(reps)
    for b in range(reps):
        p = np.r_[r.random(m0), norm.sf(r.normal(3.0, 1.0, m - m0))]
        rej = adjust_pvalues(p, "benjamini_yekutieli") <= q
        fdp[b] = rej[:m0].sum() / max(rej.sum(), 1)
    assert fdp.mean() <= q + 2 * fdp.std(ddof=1) / np.sqrt(reps)


def test_verdict_boundaries():
    p = np.full(12, 0.5)
    assert irf_verdict(np.zeros(12)).label == "different"
    six = p.copy()
    six[:6] = 0.0
    v = irf_verdict(six)
    assert v.label == "not different" and v.any_reject and v.n_reject == 6
    seven = p.copy()
    seven[:7] = 0.0
    assert irf_verdict(seven).different
    assert not irf_verdict(p).any_reject


def fake_test(k, labels, pvals):
    n = len(labels)
    z = np.zeros(n)
    return PointTest(k, "equality", z, z, labels, z, z, z, z, np.asarray(pvals, float))


def test_report_layout_and_summaries():
    labs = [("AT", "2000-Q1"), ("BE", "2000-Q1")]
    tests = {k: fake_test(k, labs, [0.001, 0.5]) for k in range(1, 13)}
    tests[12] = fake_test(12, labs[:1], [0.2])
    rep = build_test_report("gdp", "rr", tests, 0.1)
    df = rep.to_frame()
    assert list(df.columns) == ["outcome", "policy", "horizon", "prop_accept", "raw_p_summary", "adj_method",
                                "adj_reject_frac", "verdict"]
    assert len(df) == 12 * 3
    assert df.loc[df.horizon == 1, "prop_accept"].iloc[0] == 0.5
    assert df.loc[df.horizon == 12, "prop_accept"].iloc[0] == 1.0
    assert df.loc[df.horizon == 1, "raw_p_summary"].iloc[0] == pytest.approx(0.2505)
    # AT rejects at 11 of 12 horizons even after Bonferroni, BE never: one of two points
    assert rep.different_share("bonferroni") == 0.5
    assert rep.verdict("bonferroni") == "not different"
    assert set(df.verdict) == {"not different"}
    holm, bonf = rep.adjusted["holm"], rep.adjusted["bonferroni"]
    ok = ~np.isnan(bonf)
    assert np.all(holm[ok] <= bonf[ok]) and np.all(bonf[ok] >= rep.raw[ok])

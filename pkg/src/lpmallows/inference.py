"""Robust covariance, equality/zero tests of averaged responses, and p-value adjustment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import BandwidthExceedsSample, EmptyInput, MissingRegimeValue, OutOfRangeP, SampleMismatch
from .projection import FORM_INTERACTIONS, HorizonFit, effect_loadings, effect_terms, regime_variables_for

ADJUST_METHODS = ("bonferroni", "holm", "benjamini_yekutieli")
DEFAULT_ALPHA = 0.1


@dataclass(frozen=True, eq=False)
class RobustCov:
    """Named coefficient covariance (Bartlett kernel, clustered by country)."""

    names: tuple
    matrix: np.ndarray
    bandwidth: int
    kernel: str = "bartlett"
    clustering: str = "country"

    def sub(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in names]
        return self.matrix[np.ix_(idx, idx)]

    def se(self, name: str) -> float:
        j = self.names.index(name)
        return float(np.sqrt(self.matrix[j, j]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.matrix, index=list(self.names), columns=list(self.names))


def bartlett_weights(bandwidth: int) -> np.ndarray:
    """Weights ``1 - l/(L+1)`` for lags ``l = 0..L``."""
    lags = np.arange(bandwidth + 1)
    return 1.0 - lags / (bandwidth + 1.0)


def panel_hac_meat(scores: np.ndarray, country_idx: np.ndarray, period_idx: np.ndarray, bandwidth: int) -> np.ndarray:
    """Sum over countries of the Bartlett long-run covariance of ``scores``.

    Autocovariances are taken within country at lags measured in periods, so
    gaps in a country's sample are respected.  ``bandwidth = 0`` gives the
    plain sum of outer products (White).
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    if bandwidth < 0:
        raise BandwidthExceedsSample(f"bandwidth must be nonnegative, got {bandwidth}")
    if scores.shape[0] == 0:
        raise EmptyInput("no observations for covariance")
    p0 = period_idx.min()
    span = int(period_idx.max() - p0) + 1
    n_periods = np.unique(period_idx).size
    if bandwidth >= n_periods:
        raise BandwidthExceedsSample(f"bandwidth {bandwidth} not below the {n_periods} sample periods")
    meat = scores.T @ scores
    if bandwidth == 0:
        return meat
    codes, ci = np.unique(country_idx, return_inverse=True)
    grid = np.zeros((codes.size, span, scores.shape[1]))
    grid[ci, period_idx - p0] = scores
    w = bartlett_weights(bandwidth)
    k = scores.shape[1]
    for lag in range(1, min(bandwidth, span - 1) + 1):
        gamma = grid[:, lag:].reshape(-1, k).T @ grid[:, :-lag].reshape(-1, k)
        meat += w[lag] * (gamma + gamma.T)
    return meat


def _psd(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    if vals.min() >= 0:
        return m
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


def robust_cov(fit: HorizonFit, bandwidth: int | None = None) -> RobustCov:
    """Panel Newey-West sandwich ``(X'X)^-1 S (X'X)^-1``.

    Parameters
    ----------
    fit : HorizonFit
    bandwidth : int, optional
        Bartlett lag window; defaults to the fit's bandwidth (the horizon).
    """
    L = fit.bandwidth if bandwidth is None else int(bandwidth)
    d = fit.design
    meat = panel_hac_meat(d.X * fit.resid[:, None], d.country_idx, d.period_idx, L)
    bread = fit.xtx_inv
    return RobustCov(tuple(fit.names), _psd(bread @ meat @ bread), L)


def influence(fit: HorizonFit, names: Sequence[str]) -> np.ndarray:
    """Rows of ``(X'X)^-1 x_t u_t`` for coefficients ``names``; shape ``(n, len(names))``."""
    idx = [fit.names.index(n) for n in names]
    return (fit.design.X * fit.resid[:, None]) @ fit.xtx_inv[:, idx]


def _check_common(fits: Mapping[str, HorizonFit]) -> HorizonFit:
    fits = list(fits.values())
    if not fits:
        raise EmptyInput("no fits supplied")
    ref = fits[0]
    keys = ref.design.row_keys()
    for f in fits[1:]:
        if f.T_eff != ref.T_eff or not np.array_equal(f.design.row_keys(), keys):
            raise SampleMismatch("fits must share an identical common sample")
    return ref


def joint_covariance(
    fits: Mapping[str, HorizonFit], terms: Mapping[str, Sequence[str]], bandwidth: int | None = None
) -> tuple:
    """Joint robust covariance of selected coefficients across models.

    Influence functions of every model are stacked on the common sample and fed
    through the panel HAC estimator.  Returns ``(labels, matrix)`` where labels
    are ``(model, term)`` pairs.
    """
    ref = _check_common(fits)
    labels, blocks = [], []
    for m, names in terms.items():
        live = [n for n in names if n not in fits[m].design.dropped]
        if live:
            blocks.append(influence(fits[m], live))
            labels.extend((m, n) for n in live)
    if not blocks:
        return [], np.zeros((0, 0))
    psi = np.column_stack(blocks)
    L = ref.bandwidth if bandwidth is None else int(bandwidth)
    d = ref.design
    return labels, _psd(panel_hac_meat(psi, d.country_idx, d.period_idx, L))


# ---------------------------------------------------------------------------
# equality and zero tests


def _weight_map(weights) -> dict:
    if hasattr(weights, "as_dict"):
        weights = weights.as_dict()
    return {m: float(w) for m, w in dict(weights).items()}


@dataclass(frozen=True, eq=False)
class PointTest:
    """Per-(country, period) test of an averaged marginal effect."""

    horizon: int
    kind: str
    country_idx: np.ndarray
    period_idx: np.ndarray
    labels: list
    estimate: np.ndarray
    reference: np.ndarray
    se: np.ndarray
    stat: np.ndarray
    pvalue: np.ndarray

    def acceptance_proportion(self, alpha: float = DEFAULT_ALPHA) -> float:
        return acceptance_proportion(self.pvalue, alpha)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "country": [c for c, _ in self.labels],
                "period": [p for _, p in self.labels],
                "horizon": self.horizon,
                "estimate": self.estimate,
                "reference": self.reference,
                "se": self.se,
                "stat": self.stat,
                "pvalue": self.pvalue,
            }
        )


def _eval_values(fit: HorizonFit, points, forms) -> dict:
    need = regime_variables_for(forms)
    src = fit.design.regime_values if points is None else points
    out = {}
    for v in need:
        if v not in src:
            raise MissingRegimeValue(f"regime series {v!r} not supplied")
        a = np.asarray(src[v], dtype=float)
        bad = np.flatnonzero(~np.isfinite(a))
        if bad.size:
            where = fit.design.row_labels()[bad[0]] if points is None else int(bad[0])
            raise MissingRegimeValue(f"{v} missing at evaluation point {where}")
        out[v] = a
    return out


def _combination_test(fits, weights, baseline, points, bandwidth, kind) -> PointTest:
    w = {m: x for m, x in _weight_map(weights).items() if x != 0.0}
    for m in w:
        if m not in fits:
            raise EmptyInput(f"weighted model {m!r} has no fit")
    used = {m: fits[m] for m in w}
    if baseline is not None:
        used[baseline] = fits[baseline]
    ref = _check_common(used)
    values = _eval_values(ref, points, list(w))
    n = len(next(iter(values.values()))) if values else ref.T_eff

    terms, loads = {}, {}
    for m in w:
        t = effect_terms(fits[m].design)
        L = np.broadcast_to(effect_loadings(m, values), (n, len(t))) if FORM_INTERACTIONS[m] else np.ones((n, 1))
        live = [j for j, name in enumerate(t) if name not in fits[m].design.dropped]
        terms[m] = [t[j] for j in live]
        loads[m] = w[m] * L[:, live]
    if baseline is not None:
        bterm = fits[baseline].design.roles["delta1"]
        terms[baseline] = [bterm]
        loads[baseline] = -np.ones((n, 1))

    labels, cov = joint_covariance({m: fits[m] for m in terms}, terms, bandwidth)
    G = np.column_stack([loads[m] for m in terms])
    theta = np.array([fits[m].term(t) for m in terms for t in terms[m]])
    diff = G @ theta
    var = np.einsum("ij,jk,ik->i", G, cov, G)
    se = np.sqrt(np.clip(var, 0.0, None))
    reference = -loads[baseline][:, 0] * fits[baseline].term(bterm) if baseline is not None else np.zeros(n)
    estimate = diff + reference
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.sign(diff) * np.inf))
    pvalue = 2.0 * norm.sf(np.abs(stat))
    d = ref.design
    labels = d.row_labels() if points is None else [("", str(j)) for j in range(n)]
    ci = d.country_idx if points is None else np.full(n, -1)
    pi = d.period_idx if points is None else np.full(n, -1)
    return PointTest(ref.horizon, kind, ci, pi, labels, estimate, reference, se, stat, pvalue)


def equality_test(
    fits: Mapping[str, HorizonFit],
    weights,
    baseline: str = "Baseline",
    points: Mapping[str, np.ndarray] | None = None,
    bandwidth: int | None = None,
) -> PointTest:
    """Test averaged marginal effect = baseline policy coefficient at every evaluation point.

    By default each row of the common sample is an evaluation point with its
    own regime values.  Weights are treated as fixed; the two-sided p-value uses
    the normal reference distribution.
    """
    return _combination_test(fits, weights, baseline, points, bandwidth, "equality")


def zero_test(
    fits: Mapping[str, HorizonFit],
    weights,
    points: Mapping[str, np.ndarray] | None = None,
    bandwidth: int | None = None,
) -> PointTest:
    """Test averaged marginal effect = 0 at every evaluation point."""
    return _combination_test(fits, weights, None, points, bandwidth, "zero")


def acceptance_proportion(pvals, alpha: float = DEFAULT_ALPHA) -> float:
    """Share of p-values strictly above ``alpha``."""
    p = _validate_p(pvals)
    return float(np.mean(p > alpha))


# ---------------------------------------------------------------------------
# multiple testing


def _validate_p(pvals) -> np.ndarray:
    p = np.asarray(pvals, dtype=float).ravel()
    if p.size == 0:
        raise EmptyInput("empty p-value set")
    if not np.all((p >= 0) & (p <= 1)):
        raise OutOfRangeP("p-values must lie in [0, 1]")
    return p


def adjust_pvalues(pvals, method: str) -> np.ndarray:
    """Family-wise or false-discovery adjusted p-values.

    Parameters
    ----------
    pvals : array_like
        Raw p-values of one family.
    method : {"bonferroni", "holm", "benjamini_yekutieli"}

    Returns
    -------
    numpy.ndarray
        Adjusted p-values in the input order, capped at 1.
    """
    p = _validate_p(pvals)
    m = p.size
    if method == "bonferroni":
        return np.minimum(1.0, m * p)
    order = np.argsort(p, kind="stable")
    ps = p[order]
    if method == "holm":
        adj = np.maximum.accumulate(np.minimum(1.0, (m - np.arange(m)) * ps))
    elif method == "benjamini_yekutieli":
        c = np.sum(1.0 / np.arange(1, m + 1))
        # p_(i) / i first, then the constant m c(m); keeps hand-computed values exact
        raw = np.minimum(1.0, ps / np.arange(1, m + 1) * (m * c))
        adj = np.minimum.accumulate(raw[::-1])[::-1]
    else:
        raise ValueError(f"unknown adjustment {method!r}; expected one of {ADJUST_METHODS}")
    out = np.empty(m)
    out[order] = adj
    return np.maximum(out, p)


@dataclass(frozen=True)
class Verdict:
    """Whole-response decision from one family of adjusted p-values."""

    different: bool
    n_reject: int
    n_horizons: int
    any_reject: bool

    @property
    def label(self) -> str:
        return "different" if self.different else "not different"


def irf_verdict(adjusted, alpha: float = DEFAULT_ALPHA) -> Verdict:
    """``different`` iff rejections form a strict majority of the horizons."""
    p = _validate_p(adjusted)
    n = int(np.sum(p <= alpha))
    return Verdict(2 * n > p.size, n, p.size, n > 0)


@dataclass(frozen=True, eq=False)
class TestReport:
    """Equality-test summary for one (outcome, policy) cell.

    ``raw`` is a points-by-horizons matrix of p-values (NaN where a point is
    not in that horizon's sample); each point's row is one adjustment family.
    """

    outcome: str
    policy: str
    horizons: tuple
    points: list
    raw: np.ndarray
    adjusted: Mapping[str, np.ndarray]
    alpha: float

    def prop_accept(self) -> np.ndarray:
        return np.array([acceptance_proportion(c[~np.isnan(c)], self.alpha) for c in self.raw.T])

    def adj_reject_frac(self, method: str) -> np.ndarray:
        a = self.adjusted[method]
        return np.array([float(np.mean(c[~np.isnan(c)] <= self.alpha)) for c in a.T])

    def point_verdicts(self, method: str) -> list:
        out = []
        for row in self.adjusted[method]:
            out.append(irf_verdict(row[~np.isnan(row)], self.alpha))
        return out

    def different_share(self, method: str) -> float:
        """Share of evaluation points whose whole response is judged different."""
        return float(np.mean([v.different for v in self.point_verdicts(method)]))

    def pooled_reject_frac(self, method: str) -> float:
        a = self.adjusted[method]
        return float(np.mean(a[~np.isnan(a)] <= self.alpha))

    def verdict(self, method: str) -> str:
        """Cell-level verdict: a strict majority of points have different responses."""
        return "different" if 2 * sum(v.different for v in self.point_verdicts(method)) > len(self.points) else "not different"

    def to_frame(self) -> pd.DataFrame:
        rows = []
        acc = self.prop_accept()
        med = [float(np.median(c[~np.isnan(c)])) for c in self.raw.T]
        for method in ADJUST_METHODS:
            frac = self.adj_reject_frac(method)
            verdict = self.verdict(method)
            for j, k in enumerate(self.horizons):
                rows.append(
                    {
                        "outcome": self.outcome,
                        "policy": self.policy,
                        "horizon": k,
                        "prop_accept": acc[j],
                        "raw_p_summary": med[j],
                        "adj_method": method,
                        "adj_reject_frac": frac[j],
                        "verdict": verdict,
                    }
                )
        df = pd.DataFrame(rows)
        return df.sort_values(["horizon", "adj_method"], kind="stable").reset_index(drop=True)


def build_test_report(
    outcome: str, policy: str, tests: Mapping[int, PointTest], alpha: float = DEFAULT_ALPHA
) -> TestReport:
    """Collect per-horizon point tests into per-point families across horizons."""
    if not tests:
        raise EmptyInput("no horizon tests supplied")
    horizons = tuple(sorted(tests))
    keys = sorted({lab for t in tests.values() for lab in t.labels})
    pos = {lab: i for i, lab in enumerate(keys)}
    raw = np.full((len(keys), len(horizons)), np.nan)
    for j, k in enumerate(horizons):
        t = tests[k]
        raw[[pos[lab] for lab in t.labels], j] = t.pvalue
    adjusted = {}
    for method in ADJUST_METHODS:
        a = np.full_like(raw, np.nan)
        for i, row in enumerate(raw):
            ok = ~np.isnan(row)
            a[i, ok] = adjust_pvalues(row[ok], method)
        adjusted[method] = a
    return TestReport(outcome, policy, horizons, keys, raw, adjusted, alpha)


def acceptance_table(reports: Iterable[TestReport]) -> pd.DataFrame:
    """Acceptance proportions laid out horizons by (outcome, policy)."""
    cols = {}
    for r in reports:
        cols[(r.outcome, r.policy)] = pd.Series(r.prop_accept(), index=pd.Index(r.horizons, name="horizon"))
    df = pd.DataFrame(cols)
    df.columns = pd.MultiIndex.from_tuples(df.columns, names=["outcome", "policy"])
    return df

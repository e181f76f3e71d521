"""Synthetic panels with known responses and Monte Carlo experiments.

The generator iterates the horizon-1 equation forward::

    y[t+1] = a_i + by y[t] + gy y[t-1] + bx x[t] + gx x[t-1]
             + d1 p[t] + d2 p[t-1] + interactions(p[t], rate regime at t)
             + lambda_i' f[t+1] + u[t+1]

with an AR(1) control ``x``, an AR(1) policy change ``p`` and AR(1) quarterly
interest-rate changes whose running sum is the rate level.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.stats import norm

from .data import PanelDataset, build_regimes, parse_period
from .errors import ExperimentFailed, InvalidConfig, LpMallowsError
from .projection import FORMS, HORIZONS, EvaluationPoints, ModelSpec, Regime, fit_models, standard_regimes

NOISE_KINDS = ("iid", "ma", "hetero")
LAB_CONTROLS = ("y", "x")
TRUTH_DRAWS = 10_000
TRUTH_SEED = 20_240_601
# fields that do not change the population response
_SAMPLE_FIELDS = ("seed", "N", "T", "burn_in", "start", "alpha", "alpha_scale", "n_factors", "loading_scale",
                  "factor_rho")
_IRF_CACHE: dict = {}
MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process with a known true form.

    ``delta`` holds ``(d1, d2, d3, d4, d5)``; entries beyond the true form's
    interaction count are ignored.  ``T`` counts retained quarters per country.
    """

    true_form: str = "A"
    delta: tuple = (1.0, 0.3, -0.5, 0.0, 0.0)
    beta_y: float = 0.5
    gamma_y: float = 0.1
    beta_x: float = 0.3
    gamma_x: float = 0.1
    alpha: tuple | None = None
    alpha_scale: float = 1.0
    N: int = 11
    T: int = 200
    burn_in: int = 100
    noise: str = "iid"
    sigma: float = 1.0
    ma_coefs: tuple = ()
    hetero: float = 1.0
    n_factors: int = 0
    loading_scale: float = 1.0
    factor_rho: float = 0.0
    rate_mean: float = 3.0
    rate_rho: float = 0.6
    rate_sigma: float = 0.3
    policy_rho: float = 0.0
    policy_sigma: float = 1.0
    control_rho: float = 0.5
    control_sigma: float = 1.0
    start: str = "1900-Q1"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        object.__setattr__(self, "ma_coefs", tuple(float(c) for c in self.ma_coefs))
        if self.alpha is not None:
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        self.validate()

    def validate(self) -> None:
        if self.true_form not in FORMS:
            raise InvalidConfig(f"true_form must be one of {FORMS}")
        if len(self.delta) != 5:
            raise InvalidConfig("delta must have five entries (d1..d5)")
        for name in ("rate_rho", "policy_rho", "control_rho", "factor_rho"):
            if not abs(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must satisfy |rho| < 1")
        roots = np.abs(np.roots([1.0, -self.beta_y, -self.gamma_y]))
        if roots.size and roots.max() >= 1:
            raise InvalidConfig("outcome dynamics (beta_y, gamma_y) are not stationary")
        for name in ("sigma", "rate_sigma", "policy_sigma", "control_sigma"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.noise not in NOISE_KINDS:
            raise InvalidConfig(f"noise must be one of {NOISE_KINDS}")
        if self.N < 1 or self.T < 8 or self.burn_in < 4:
            raise InvalidConfig("need N >= 1, T >= 8 and burn_in >= 4")
        if self.n_factors < 0 or self.hetero < 0:
            raise InvalidConfig("n_factors and hetero must be nonnegative")
        if self.alpha is not None and len(self.alpha) != self.N:
            raise InvalidConfig("alpha must have N entries")
        try:
            parse_period(self.start)
        except LpMallowsError as exc:
            raise InvalidConfig(str(exc)) from None

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown DGP keys {sorted(extra)}")
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return asdict(self)

    def interaction_count(self) -> int:
        return {"Baseline": 0, "A": 1, "B": 1, "C": 1, "D": 1, "E": 3}[self.true_form]


def interaction_effect(form: str, delta, ind_q, ind_a, d_i_q, d_i_a):
    """Per-unit-policy contribution of the interaction terms at given regime values."""
    if form == "Baseline":
        return 0.0 * ind_q
    if form == "A":
        return delta[2] * ind_q
    if form == "B":
        return delta[2] * ind_a
    if form == "C":
        return delta[2] * d_i_q
    if form == "D":
        return delta[2] * d_i_a
    return delta[2] * ind_q + delta[3] * d_i_q + delta[4] * d_i_q * ind_q


def _ar1(rng, shape, rho, sigma, axis_len):
    """AR(1) along the last axis started from its stationary distribution."""
    e = rng.standard_normal(shape + (axis_len,)) * sigma
    out = np.empty_like(e)
    out[..., 0] = e[..., 0] / math.sqrt(1.0 - rho * rho)
    for t in range(1, axis_len):
        out[..., t] = rho * out[..., t - 1] + e[..., t]
    return out


def rate_change_quartiles(config: DgpConfig) -> EvaluationPoints:
    """Population quartiles of the quarterly and four-quarter rate changes."""
    rho, s = config.rate_rho, config.rate_sigma
    var_q = s * s / (1.0 - rho * rho)
    var_a = var_q * (4.0 + 2.0 * sum((4 - j) * rho**j for j in (1, 2, 3)))
    z = norm.ppf(0.75)
    return EvaluationPoints((-z * math.sqrt(var_q), z * math.sqrt(var_q)), (-z * math.sqrt(var_a), z * math.sqrt(var_a)))


@dataclass(frozen=True, eq=False)
class Truth:
    """What the generator knows.

    Grids are ``(N, P)`` and aligned on the base period ``t``: ``mean_next`` is
    the conditional mean of ``y[t+1]`` given period-``t`` information and
    ``noise_next`` the matching error (factor component included).
    """

    config: DgpConfig
    alpha: np.ndarray
    loadings: np.ndarray
    factors: np.ndarray
    mean_next: np.ndarray
    noise_next: np.ndarray
    points: EvaluationPoints
    irf: Mapping[str, np.ndarray]
    ind_q: np.ndarray
    ind_a: np.ndarray

    def irf_at(self, regime: Regime, horizons: int = len(HORIZONS), draws: int = TRUTH_DRAWS) -> np.ndarray:
        return simulate_irf(self.config, regime, horizons, draws)


def _regime_inputs(regime: Regime) -> dict:
    ind = 0.0 if regime.indicator is None else float(regime.indicator)
    val = 0.0 if regime.value is None else float(regime.value)
    return {"ind_q": ind, "ind_a": ind, "d_i_q": val, "d_i_a": val}


def simulate_irf(config: DgpConfig, regime: Regime, horizons: int = len(HORIZONS), draws: int = TRUTH_DRAWS) -> np.ndarray:
    """Average impulse-minus-baseline path of ``y`` after a unit policy change.

    ``draws`` paths share random numbers between the shocked and the baseline
    run; the regime at the impact date is fixed at ``regime``, later regimes
    evolve freely.  The draws use a fixed stream, so the result depends only on
    the structural parameters and is cached across replications.
    """
    params = {k: v for k, v in config.to_dict().items() if k not in _SAMPLE_FIELDS}
    key = (json.dumps(params, sort_keys=True, default=list), regime.indicator, regime.value, horizons, draws)
    if key not in _IRF_CACHE:
        _IRF_CACHE[key] = _simulate_irf(config, regime, horizons, draws)
    return _IRF_CACHE[key].copy()


def _simulate_irf(config: DgpConfig, regime: Regime, horizons: int, draws: int) -> np.ndarray:
    c = config
    d = c.delta
    rng = np.random.default_rng(np.random.SeedSequence(TRUTH_SEED))
    burn = 40
    n = burn + horizons + 1
    dq = _ar1(rng, (draws,), c.rate_rho, c.rate_sigma, n)
    da = np.full_like(dq, np.nan)
    da[:, 3:] = dq[:, 3:] + dq[:, 2:-1] + dq[:, 1:-2] + dq[:, :-3]
    da[:, :3] = da[:, 3:4]
    p = _ar1(rng, (draws,), c.policy_rho, c.policy_sigma, n)
    x = _ar1(rng, (draws,), c.control_rho, c.control_sigma, n)
    u = rng.standard_normal((draws, n)) * c.sigma
    t0 = burn
    forced = _regime_inputs(regime)

    def run(shock: float) -> np.ndarray:
        pp = p.copy()
        extra = shock
        for t in range(t0, n):
            pp[:, t] += extra
            extra *= c.policy_rho
        y = np.zeros((draws, n + 1))
        for t in range(1, n):
            reg = {"ind_q": (dq[:, t] < 0).astype(float), "ind_a": (da[:, t] < 0).astype(float),
                   "d_i_q": dq[:, t], "d_i_a": da[:, t]}
            if t == t0:
                reg = {k: np.full(draws, v) for k, v in forced.items()}
            inter = interaction_effect(c.true_form, d, **reg)
            y[:, t + 1] = (
                c.beta_y * y[:, t] + c.gamma_y * y[:, t - 1] + c.beta_x * x[:, t] + c.gamma_x * x[:, t - 1]
                + (d[0] + inter) * pp[:, t] + d[1] * pp[:, t - 1] + u[:, t]
            )
        return y

    diff = run(1.0) - run(0.0)
    return diff[:, t0 + 1 : t0 + 1 + horizons].mean(axis=0)


def generate_dgp(config: DgpConfig) -> tuple:
    """Simulate a panel; returns ``(PanelDataset, Truth)``.

    Columns: ``y`` (outcome), ``x`` (control), ``p`` (policy change) and
    ``rate`` (interest-rate level).  Identical configs give bit-identical panels.
    """
    c = config
    rng = np.random.default_rng(np.random.SeedSequence(c.seed))
    N, B = c.N, c.burn_in
    n = B + c.T
    alpha = np.asarray(c.alpha) if c.alpha is not None else rng.standard_normal(N) * c.alpha_scale
    dq = _ar1(rng, (N,), c.rate_rho, c.rate_sigma, n)
    rate = c.rate_mean + np.cumsum(dq, axis=1) - np.cumsum(dq, axis=1)[:, B - 1 : B]
    p = _ar1(rng, (N,), c.policy_rho, c.policy_sigma, n)
    x = _ar1(rng, (N,), c.control_rho, c.control_sigma, n)
    eps = rng.standard_normal((N, n + max(len(c.ma_coefs), 0)))
    if c.noise == "ma":
        q = len(c.ma_coefs)
        u = eps[:, q:].copy()
        for j, th in enumerate(c.ma_coefs, start=1):
            u += th * eps[:, q - j : q - j + n]
        u *= c.sigma
    else:
        u = eps[:, :n] * c.sigma
    if c.noise == "hetero":
        scale = np.sqrt(1.0 + c.hetero * (x / c.control_sigma) ** 2 * (1.0 - c.control_rho**2))
        u = u * scale / math.sqrt(1.0 + c.hetero)
    r = c.n_factors
    loadings = rng.standard_normal((N, r)) * c.loading_scale
    factors = _ar1(rng, (r,), c.factor_rho, 1.0, n).T if r else np.zeros((n, 0))
    common = loadings @ factors.T

    d_a = np.full_like(dq, np.nan)
    d_a[:, 3:] = dq[:, 3:] + dq[:, 2:-1] + dq[:, 1:-2] + dq[:, :-3]
    ind_q = (dq < 0).astype(float)
    ind_a = np.where(np.isnan(d_a), 0.0, (d_a < 0).astype(float))
    inter = interaction_effect(c.true_form, c.delta, ind_q, ind_a, dq, np.nan_to_num(d_a))

    y = np.zeros((N, n))
    mean_next = np.full((N, n), np.nan)
    noise_next = np.full((N, n), np.nan)
    d = c.delta
    for t in range(1, n - 1):
        m = (
            alpha + c.beta_y * y[:, t] + c.gamma_y * y[:, t - 1] + c.beta_x * x[:, t] + c.gamma_x * x[:, t - 1]
            + (d[0] + inter[:, t]) * p[:, t] + d[1] * p[:, t - 1]
        )
        e = common[:, t + 1] + u[:, t + 1]
        y[:, t + 1] = m + e
        mean_next[:, t] = m
        noise_next[:, t] = e

    keep = slice(B, n)
    periods = pd.period_range(parse_period(c.start), periods=c.T, freq="Q")
    countries = tuple(f"C{i + 1:02d}" for i in range(N))
    values = {"y": y[:, keep], "x": x[:, keep], "p": p[:, keep], "rate": rate[:, keep]}
    panel = PanelDataset(countries, periods, values, np.ones((N, c.T), dtype=bool))
    # the last retained period has no successor inside the sample
    mn, nn = mean_next[:, keep].copy(), noise_next[:, keep].copy()
    mn[:, -1] = np.nan
    nn[:, -1] = np.nan
    pts = rate_change_quartiles(c)
    irf = {label: simulate_irf(c, reg) for label, reg in standard_regimes(c.true_form, pts).items()}
    truth = Truth(c, alpha, loadings, factors[keep], mn, nn, pts, irf, ind_q[:, keep], ind_a[:, keep])
    return panel, truth


def recursion_irf(config: DgpConfig, regime: Regime, horizons: int = len(HORIZONS)) -> np.ndarray:
    """Closed-form response when the policy change is serially uncorrelated.

    Falls back to :func:`simulate_irf` when ``policy_rho != 0``.
    """
    c = config
    if c.policy_rho != 0.0:
        return simulate_irf(c, regime, horizons)
    v = _regime_inputs(regime)
    e = np.zeros(horizons + 2)
    e[2] = c.delta[0] + float(interaction_effect(c.true_form, c.delta, **v))
    for k in range(3, horizons + 2):
        e[k] = c.beta_y * e[k - 1] + c.gamma_y * e[k - 2] + (c.delta[1] if k == 3 else 0.0)
    return e[2:]


def lab_spec(form: str = "Baseline") -> ModelSpec:
    """Projection spec matching the generator's column names."""
    return ModelSpec(form=form, outcome="y", policy="p", controls=LAB_CONTROLS)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class McOptions:
    """What each replication estimates.

    ``holdout`` extra quarters are simulated beyond ``T`` to measure
    out-of-sample forecast error at horizon 1.  ``r_max`` > 0 adds factor-count
    selection on the horizon-1 design of the true form.
    """

    horizons: tuple = (1,)
    criterion: str = "mallows"
    bandwidth: int | None = None
    alpha: float = 0.1
    tests: bool = False
    irf: bool = True
    holdout: int = 0
    r_max: int = 0
    factor_models: bool = False
    workers: int = 1

    @classmethod
    def from_dict(cls, d: Mapping) -> "McOptions":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown Monte Carlo option keys {sorted(extra)}")
        d = dict(d)
        if "horizons" in d:
            d["horizons"] = tuple(int(k) for k in d["horizons"])
        return cls(**d)


def replication_seed(seed: int, rep: int) -> int:
    """Independent 63-bit seed for replication ``rep``."""
    return int(np.random.SeedSequence(seed, spawn_key=(rep,)).generate_state(2, np.uint64)[0] >> np.uint64(1))


def _one_replication(config: DgpConfig, opts: McOptions, rep: int) -> dict:
    from .pipeline import PipelineOptions, analyze_horizon

    seed = replication_seed(config.seed, rep)
    cfg = replace(config, seed=seed, T=config.T + opts.holdout)
    panel, truth = generate_dgp(cfg)
    regimes = build_regimes(panel, "rate")
    spec = lab_spec()
    est_window = (panel.periods[0], panel.periods[config.T - 1]) if opts.holdout else None
    popts = PipelineOptions(horizons=opts.horizons, window=est_window, criterion=opts.criterion,
                            bandwidth=opts.bandwidth, alpha=opts.alpha, tests=opts.tests,
                            factors="select" if opts.factor_models else None,
                            r_max=max(opts.r_max, 1), seed=seed)
    rec = {"rep": rep, "seed": seed, "horizons": {}}
    for k in opts.horizons:
        h = analyze_horizon(panel, regimes, spec, k, popts, truth.points)
        hk = {"weights": h.weights.as_dict(), "criterion": h.weights.criterion_value}
        if opts.irf:
            hk["irf"] = {}
            for label in truth.irf:
                avg = sum(h.weights.weight(m) * h.points[m][label].value for m in h.weights.models)
                hk["irf"][label] = {"average": avg, **{m: h.points[m][label].value for m in FORMS}}
                hk.setdefault("irf_se", {})[label] = {m: h.points[m][label].se for m in FORMS}
        if opts.tests:
            hk["reject_frac"] = float(np.mean(h.equality.pvalue <= opts.alpha))
            hk["n_points"] = int(h.equality.pvalue.size)
        if k == 1:
            hk.update(_identity_terms(h, truth))
            if opts.holdout:
                hk.update(_holdout_msfe(panel, regimes, spec, h, config.T, opts.bandwidth))
        rec["horizons"][k] = hk
    if opts.r_max > 0:
        from .factors import select_factor_number
        from .projection import build_design

        design = build_design(panel, regimes, lab_spec(config.true_form), 1, est_window)
        r_hat, ffits = select_factor_number(design, opts.r_max, seed)
        rec["r_hat"] = int(r_hat)
        rec["ssr_monotone"] = bool(all(np.all(np.diff(f.ssr_path) <= 0) for f in ffits.values()))
        ff = ffits[config.n_factors] if config.n_factors in ffits else ffits[r_hat]
        rec["factor_delta1"] = ff.fit.term("p")
        rec["factor_delta1_se"] = ff.fit.se("p")
    return rec


def _identity_terms(h, truth: Truth) -> dict:
    """Mallows criterion minus in-sample noise and loss at the chosen weights."""
    cand = h.candidates
    d = h.fits[cand.models[0]].design
    mu = truth.mean_next[d.country_idx, d.period_idx]
    u = truth.noise_next[d.country_idx, d.period_idx]
    w = h.weights.w
    fitted = np.column_stack([h.fits[m].fitted for m in cand.models]) @ w
    T = d.T_eff
    loss = float(np.sum((mu - fitted) ** 2) / T)
    noise = float(u @ u / T)
    crit = h.weights.criterion_value
    single = {m: float(np.sum((mu - h.fits[m].fitted) ** 2) / T) for m in cand.models}
    return {"C": crit, "uu": noise, "L": loss, "identity": crit - noise - loss, "L_single": single}


def _holdout_msfe(panel, regimes, spec, h, T, bandwidth) -> dict:
    window = (panel.periods[T], panel.periods[-1])
    out_fits = fit_models(panel, regimes, spec, 1, FORMS, window, bandwidth)
    preds = {m: h.fits[m].predict(out_fits[m].design) for m in h.candidates.models}
    y = out_fits["Baseline"].design.y
    avg = sum(h.weights.weight(m) * preds[m] for m in preds)
    return {"msfe_average": float(np.mean((y - avg) ** 2)),
            "msfe_single": {m: float(np.mean((y - v) ** 2)) for m, v in preds.items()}}


@dataclass(frozen=True, eq=False)
class McReport:
    """Per-replication records plus aggregate tables."""

    config: DgpConfig
    options: McOptions
    replications: int
    records: list
    failures: list

    @property
    def seeds(self) -> list:
        return [r["seed"] for r in self.records] + [f["seed"] for f in self.failures]

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.replications

    def weights_table(self) -> pd.DataFrame:
        rows = [
            {"rep": r["rep"], "horizon": k, "model": m, "weight": w}
            for r in self.records for k, hk in r["horizons"].items() for m, w in hk["weights"].items()
        ]
        return pd.DataFrame(rows, columns=["rep", "horizon", "model", "weight"])

    def irf_table(self) -> pd.DataFrame:
        rows = []
        truth_irf = {lab: simulate_irf(self.config, reg, max(self.options.horizons))
                     for lab, reg in standard_regimes(self.config.true_form, rate_change_quartiles(self.config)).items()}
        for r in self.records:
            for k, hk in r["horizons"].items():
                for lab, vals in hk.get("irf", {}).items():
                    for m, v in vals.items():
                        se = hk["irf_se"][lab].get(m, np.nan)
                        rows.append({"rep": r["rep"], "horizon": k, "regime": lab, "model": m, "value": v,
                                     "se": se, "truth": truth_irf[lab][k - 1]})
        return pd.DataFrame(rows, columns=["rep", "horizon", "regime", "model", "value", "se", "truth"])

    def bias_table(self) -> pd.DataFrame:
        """Bias, empirical SE, RMSE and 90% coverage per (horizon, regime, model)."""
        df = self.irf_table()
        if df.empty:
            return pd.DataFrame(columns=["horizon", "regime", "model", "bias", "emp_se", "rmse", "coverage", "n"])
        df["err"] = df["value"] - df["truth"]
        z = norm.ppf(0.95)
        df["cover"] = (df["err"].abs() <= z * df["se"]).astype(float)
        g = df.groupby(["horizon", "regime", "model"], sort=True)
        out = g.agg(bias=("err", "mean"), emp_se=("value", "std"), rmse=("err", lambda e: float(np.sqrt(np.mean(e**2)))),
                    coverage=("cover", "mean"), n=("err", "size")).reset_index()
        out.loc[out["model"] == "average", "coverage"] = np.nan
        return out

    def identity_summary(self) -> dict:
        v = np.array([r["horizons"][1]["identity"] for r in self.records if 1 in r["horizons"]])
        if v.size == 0:
            return {}
        return {"mean": float(v.mean()), "mc_se": float(v.std(ddof=1) / np.sqrt(v.size)), "n": int(v.size)}

    def msfe_summary(self) -> dict:
        recs = [r["horizons"][1] for r in self.records if 1 in r["horizons"] and "msfe_average" in r["horizons"][1]]
        if not recs:
            return {}
        single = pd.DataFrame([h["msfe_single"] for h in recs]).mean()
        return {"average": float(np.mean([h["msfe_average"] for h in recs])),
                "single": {m: float(v) for m, v in single.items()}, "n": len(recs)}

    def loss_summary(self) -> dict:
        recs = [r["horizons"][1] for r in self.records if 1 in r["horizons"]]
        if not recs:
            return {}
        single = pd.DataFrame([h["L_single"] for h in recs]).mean()
        return {"average": float(np.mean([h["L"] for h in recs])), "single": {m: float(v) for m, v in single.items()}}

    def rejection_rate(self) -> float:
        v = [hk["reject_frac"] for r in self.records for hk in r["horizons"].values() if "reject_frac" in hk]
        return float(np.mean(v)) if v else float("nan")

    def mean_weights(self) -> pd.DataFrame:
        w = self.weights_table()
        return w.groupby(["horizon", "model"], sort=True)["weight"].mean().unstack("model")

    def factor_recovery(self) -> dict:
        r = [rec["r_hat"] for rec in self.records if "r_hat" in rec]
        if not r:
            return {}
        return {"rate": float(np.mean(np.asarray(r) == self.config.n_factors)),
                "ssr_monotone": all(rec["ssr_monotone"] for rec in self.records if "ssr_monotone" in rec),
                "n": len(r)}

    def summary(self) -> dict:
        out = {
            "replications": self.replications,
            "failed": len(self.failures),
            "identity": self.identity_summary(),
            "msfe": self.msfe_summary(),
            "loss": self.loss_summary(),
            "factor_recovery": self.factor_recovery(),
        }
        if self.options.tests:
            out["rejection_rate"] = self.rejection_rate()
        return out

    def to_json(self) -> str:
        payload = {
            "config": self.config.to_dict(),
            "options": asdict(self.options) | {"workers": None},
            "seeds": sorted(self.seeds),
            "failures": self.failures,
            "summary": self.summary(),
        }
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True)

    def write(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "mc_report.json").write_text(self.to_json() + "\n")
        self.weights_table().to_csv(out / "mc_weights.csv", index=False, float_format="%.17g")
        self.bias_table().to_csv(out / "mc_bias.csv", index=False, float_format="%.17g")
        reps = pd.DataFrame(
            [{"rep": r["rep"], "seed": r["seed"], "ok": True, "error": ""} for r in self.records]
            + [{"rep": f["rep"], "seed": f["seed"], "ok": False, "error": f["error"]} for f in self.failures]
        ).sort_values("rep")
        reps.to_csv(out / "mc_replications.csv", index=False)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        return None if not np.isfinite(o) else float(o)
    if isinstance(o, np.integer):
        return int(o)
    return o


def run_monte_carlo(config: DgpConfig, replications: int, options: McOptions = McOptions()) -> McReport:
    """Run ``replications`` independent estimations of the pipeline on fresh draws.

    Replication ``j`` uses a seed derived from ``(config.seed, j)``, so the
    report does not depend on ``options.workers``.  Replications that raise a
    package error are recorded; more than 1% failures raises
    :class:`ExperimentFailed`.
    """
    if replications < 2:
        raise InvalidConfig("replications must be at least 2")

    def job(rep):
        try:
            return _one_replication(config, options, rep)
        except LpMallowsError as exc:
            return {"rep": rep, "seed": replication_seed(config.seed, rep), "error": f"{exc.code}: {exc}"}

    if options.workers > 1:
        with ThreadPoolExecutor(options.workers) as pool:
            results = list(pool.map(job, range(replications)))
    else:
        results = [job(j) for j in range(replications)]
    records = [r for r in results if "error" not in r]
    failures = [r for r in results if "error" in r]
    report = McReport(config, options, replications, records, failures)
    if report.failure_rate > MAX_FAILURE_RATE:
        raise ExperimentFailed(
            f"{len(failures)} of {replications} replications failed; first: {failures[0]['error']}"
        )
    return report


# ---------------------------------------------------------------------------
# demo dataset

DEMO_COUNTRIES = ("AT", "BE", "DE", "ES", "FI", "FR", "GR", "IE", "IT", "NL", "PT")
DEMO_SERIES = ("gdp", "cpi", "unemployment", "reer", "rate", "almp", "rr", "epl")


def demo_panel(seed: int = 2024, start: str = "1985-Q1", end: str = "2010-Q4") -> tuple:
    """Synthetic euro-area-like level panel and matching GDP forecast records.

    Returns ``(levels, forecasts)`` data frames: ``country,period,<series>`` in
    levels and ``country,edition,target_year,value``.  One country keeps a
    constant employment-protection index.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    periods = pd.period_range(parse_period(start), parse_period(end), freq="Q")
    P, N = len(periods), len(DEMO_COUNTRIES)
    rate = np.empty((N, P))
    rate[:, 0] = rng.uniform(6.0, 12.0, N)
    for t in range(1, P):
        target = 3.0 if periods[t].year >= 1999 else 7.0
        rate[:, t] = np.maximum(0.05, rate[:, t - 1] + 0.08 * (target - rate[:, t - 1]) + 0.35 * rng.standard_normal(N))
    d_rate = np.diff(rate, axis=1, prepend=rate[:, :1])
    almp_g = 2.0 * rng.standard_normal((N, P))
    rr_g = 1.5 * rng.standard_normal((N, P))
    epl_g = np.where(rng.random((N, P)) < 0.05, rng.normal(0.0, 3.0, (N, P)), 0.0)
    epl_g[-1] = 0.0
    loose = (d_rate < 0).astype(float)

    def growth(mu, rho, sd, pol, pol_loose):
        g = np.zeros((N, P))
        for t in range(1, P):
            g[:, t] = (mu + rho * (g[:, t - 1] - mu) + pol * rr_g[:, t - 1] + pol_loose * loose[:, t - 1] * almp_g[:, t - 1]
                       + sd * rng.standard_normal(N))
        return g

    gdp_g = growth(0.5, 0.4, 0.7, -0.05, 0.04)
    cpi_g = growth(0.6, 0.6, 0.3, 0.02, -0.01)
    une_g = growth(0.0, 0.5, 1.5, 0.10, -0.08)
    reer_g = growth(0.1, 0.3, 1.2, 0.03, 0.02)

    def level(base, g):
        return base * np.exp(np.cumsum(g, axis=1) / 100.0)

    series = {
        "gdp": level(100.0, gdp_g), "cpi": level(80.0, cpi_g), "unemployment": level(8.0, une_g),
        "reer": level(100.0, reer_g), "rate": rate, "almp": level(20.0, almp_g), "rr": level(40.0, rr_g),
        "epl": level(2.5, epl_g),
    }
    rows = []
    for i, c in enumerate(DEMO_COUNTRIES):
        for j, per in enumerate(periods):
            rows.append([c, f"{per.year}-Q{per.quarter}"] + [float(np.round(series[k][i, j], 6)) for k in DEMO_SERIES])
    levels = pd.DataFrame(rows, columns=["country", "period", *DEMO_SERIES])

    annual = pd.DataFrame(gdp_g, index=DEMO_COUNTRIES, columns=[p.year for p in periods]).T.groupby(level=0).sum().T
    recs = []
    for i, c in enumerate(DEMO_COUNTRIES):
        for year in range(periods[0].year - 1, periods[-1].year + 1):
            for month, target in (("12", year + 1), ("06", year + 1)):
                base = annual.loc[c].get(target, annual.loc[c].mean())
                recs.append([c, f"{year}-{month}", target, float(np.round(base + 0.5 * rng.standard_normal(), 4))])
    forecasts = pd.DataFrame(recs, columns=["country", "edition", "target_year", "value"])
    return levels, forecasts

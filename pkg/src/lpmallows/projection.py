"""Horizon-by-horizon panel local projections with interest-rate interactions.

For outcome growth ``dy`` and policy change ``dp`` the horizon-``k`` regression
is::

    dy[i, t+k] = a_i + b'X[i, t] + c'X[i, t-1] + d1 dp[i, t] + d2 dp[i, t-1]
                 + interaction terms (form A-E) + u[i, t+k]

Fixed effects enter as explicit country dummies so that the column count of
every candidate model is observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from .data import PanelDataset, RegimeVariables, _shift, format_period
from .errors import (
    AllPolicyVarianceZero,
    EmptyDesign,
    InsufficientDegreesOfFreedom,
    InvalidSpec,
    RankDeficientAfterPruning,
    RegimeMismatch,
)

FORMS = ("Baseline", "A", "B", "C", "D", "E")
CANDIDATE_FORMS = ("A", "B", "C", "D", "E")
MAX_HORIZON = 12
HORIZONS = tuple(range(1, MAX_HORIZON + 1))
DEFAULT_CONTROLS = ("inflation", "gdp", "reer", "unemployment", "d_rate")
PRUNE_TOL = 1e-10

# interaction factors per form, in coefficient order delta3, delta4, delta5
FORM_INTERACTIONS = {
    "Baseline": (),
    "A": (("ind_q",),),
    "B": (("ind_a",),),
    "C": (("d_i_q",),),
    "D": (("d_i_a",),),
    "E": (("ind_q",), ("d_i_q",), ("d_i_q", "ind_q")),
}
INDICATOR_VARS = ("ind_q", "ind_a")
DELTA_ROLES = ("delta1", "delta2", "delta3", "delta4", "delta5")


def regime_variables_for(forms: Iterable[str]) -> tuple:
    """Regime series needed by ``forms`` (deterministic order)."""
    need = []
    for f in forms:
        for factors in FORM_INTERACTIONS[f]:
            for v in factors:
                if v not in need:
                    need.append(v)
    return tuple(need)


@dataclass(frozen=True)
class ModelSpec:
    """One local-projection specification.

    ``control_lags`` counts dated control blocks (t, t-1, ...); ``policy_lags``
    counts policy lags beyond the contemporaneous term.
    """

    form: str
    outcome: str
    policy: str
    controls: tuple = DEFAULT_CONTROLS
    control_lags: int = 2
    policy_lags: int = 1
    extra_controls: tuple = ()
    include_fixed_effects: bool = True

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "extra_controls", tuple(self.extra_controls))
        if self.form not in FORMS:
            raise InvalidSpec(f"form must be one of {FORMS}, got {self.form!r}")
        if not self.controls:
            raise InvalidSpec("controls must be nonempty")
        if self.control_lags < 1 or self.policy_lags < 0:
            raise InvalidSpec("control_lags >= 1 and policy_lags >= 0 required")
        if self.policy in self.controls or self.policy in self.extra_controls:
            raise InvalidSpec(f"policy {self.policy!r} cannot also be a control")

    def with_form(self, form: str) -> "ModelSpec":
        return replace(self, form=form)

    @property
    def interactions(self) -> tuple:
        return FORM_INTERACTIONS[self.form]

    def interaction_name(self, factors: Sequence[str]) -> str:
        return "*".join((self.policy,) + tuple(factors))

    def policy_name(self, lag: int) -> str:
        return _lag_name(self.policy, lag)


def _lag_name(col: str, lag: int) -> str:
    return col if lag == 0 else f"{col}_l{lag}"


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Complete-case regressors for one (spec, horizon).

    ``X`` keeps only the columns that survived collinearity pruning;
    ``dropped`` lists the rest.  ``roles`` maps ``delta1`` .. ``delta5`` to
    column names, and ``regime_values`` holds the regime series on the rows.
    """

    spec: ModelSpec
    horizon: int
    country_idx: np.ndarray
    period_idx: np.ndarray
    y: np.ndarray
    X: np.ndarray
    names: tuple
    dropped: tuple
    roles: Mapping[str, str]
    regime_values: Mapping[str, np.ndarray]
    countries: tuple
    periods: pd.PeriodIndex

    @classmethod
    def from_arrays(cls, X, y, names=None, policy=None, country_idx=None, period_idx=None, horizon: int = 1):
        """Design from plain arrays (one country and consecutive periods by default).

        Columns are pruned exactly as in :func:`build_design`; ``policy`` names
        the column playing ``delta1`` (the first column by default).
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float)
        n = X.shape[0]
        names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
        ci = np.zeros(n, dtype=int) if country_idx is None else np.asarray(country_idx, dtype=int)
        pi = np.arange(n) if period_idx is None else np.asarray(period_idx, dtype=int)
        policy = names[0] if policy is None else policy
        keep, dropped = _prune(X, names)
        spec = ModelSpec("Baseline", "y", policy, controls=tuple(n_ for n_ in names if n_ != policy) or ("none",),
                         control_lags=1, policy_lags=0)
        countries = tuple(f"C{i}" for i in range(int(ci.max()) + 1))
        periods = pd.period_range("2000Q1", periods=int(pi.max()) + 1, freq="Q")
        return cls(spec, horizon, ci, pi, y, X[:, keep], tuple(names[j] for j in keep), dropped,
                   {"delta1": policy}, {}, countries, periods)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def T_eff(self) -> int:
        return self.X.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def row_labels(self) -> list:
        return [
            (self.countries[i], format_period(self.periods[j])) for i, j in zip(self.country_idx, self.period_idx)
        ]

    def row_keys(self) -> np.ndarray:
        """Integer key per row, unique within a panel."""
        return self.country_idx.astype(np.int64) * (len(self.periods) + 1) + self.period_idx

    def subset(self, mask: np.ndarray) -> "DesignMatrix":
        """Design restricted to rows ``mask``; re-prunes the retained columns."""
        mask = np.asarray(mask, dtype=bool)
        X = self.X[mask]
        keep, extra = _prune(X, self.names)
        return replace(
            self,
            country_idx=self.country_idx[mask],
            period_idx=self.period_idx[mask],
            y=self.y[mask],
            X=X[:, keep],
            names=tuple(self.names[j] for j in keep),
            dropped=self.dropped + extra,
            regime_values={k: v[mask] for k, v in self.regime_values.items()},
        )


def _prune(X: np.ndarray, names: Sequence[str], tol: float = PRUNE_TOL) -> tuple:
    """Drop columns in the span of earlier ones.

    Columns are scaled to unit norm and orthogonalised in their deterministic
    order; whenever a diagonal entry of ``R`` falls below ``tol`` that column is
    removed and the decomposition repeated.
    """
    norms = np.linalg.norm(X, axis=0)
    keep = [j for j in range(X.shape[1]) if norms[j] > 0]
    dropped = [names[j] for j in range(X.shape[1]) if norms[j] == 0]
    while keep:
        Z = X[:, keep] / norms[keep]
        r = np.abs(np.diag(np.linalg.qr(Z, mode="r")))
        bad = np.flatnonzero(r <= tol * max(r.max(), 1.0))
        if bad.size == 0:
            break
        dropped.append(names[keep[bad[0]]])
        del keep[bad[0]]
    order = {n: i for i, n in enumerate(names)}
    return keep, tuple(sorted(dropped, key=order.__getitem__))


class _HorizonGrids:
    """Shifted regressor grids for one horizon, shared by all forms."""

    def __init__(self, panel: PanelDataset, regimes: RegimeVariables, spec: ModelSpec, k: int):
        if not (1 <= k <= MAX_HORIZON):
            raise InvalidSpec(f"horizon must be in 1..{MAX_HORIZON}, got {k}")
        self.panel, self.spec, self.k = panel, spec, k
        self.y = _shift(panel.grid(spec.outcome), -k)
        base = {}
        for lag in range(spec.control_lags):
            for c in spec.controls:
                base[_lag_name(c, lag)] = _shift(panel.grid(c), lag)
        for e in spec.extra_controls:
            base[e] = panel.grid(e)
        p = panel.grid(spec.policy)
        for lag in range(spec.policy_lags + 1):
            base[spec.policy_name(lag)] = _shift(p, lag)
        self.base = base
        self.policy = p
        self.regime = regimes.as_dict()

    def interaction(self, factors) -> np.ndarray:
        out = self.policy
        for f in factors:
            out = out * self.regime[f]
        return out

    def sample_mask(self, forms: Iterable[str], window, require: Iterable[str] = ()) -> np.ndarray:
        mask = np.isfinite(self.y)
        for g in self.base.values():
            mask &= np.isfinite(g)
        for v in set(regime_variables_for(forms)) | set(require):
            mask &= np.isfinite(self.regime[v])
        mask &= self.panel.window_mask(window)[None, :]
        return mask

    def design(self, form: str, mask: np.ndarray) -> DesignMatrix:
        spec = self.spec.with_form(form)
        ci, pi = np.nonzero(mask)
        if ci.size == 0:
            raise EmptyDesign(
                f"no complete rows for {spec.outcome}/{spec.policy} form {form} at horizon {self.k}"
            )
        cols, names = [], []
        countries = self.panel.countries
        if spec.include_fixed_effects:
            for i in np.unique(ci):
                cols.append((ci == i).astype(float))
                names.append(f"fe[{countries[i]}]")
        else:
            cols.append(np.ones(ci.size))
            names.append("const")
        for name, g in self.base.items():
            cols.append(g[ci, pi])
            names.append(name)
        roles = {"delta1": spec.policy_name(0)}
        if spec.policy_lags >= 1:
            roles["delta2"] = spec.policy_name(1)
        for r, factors in zip(DELTA_ROLES[2:], spec.interactions):
            cols.append(self.interaction(factors)[ci, pi])
            names.append(spec.interaction_name(factors))
            roles[r] = names[-1]
        X = np.column_stack(cols)
        policy_col = X[:, names.index(roles["delta1"])]
        if np.ptp(policy_col) == 0.0:
            raise AllPolicyVarianceZero(
                f"policy {spec.policy!r} has no variation in the horizon-{self.k} sample"
            )
        keep, dropped = _prune(X, names)
        if roles["delta1"] in dropped:
            raise AllPolicyVarianceZero(
                f"policy {spec.policy!r} is collinear with fixed effects/controls at horizon {self.k}"
            )
        regime_values = {v: self.regime[v][ci, pi] for v in ("ind_q", "ind_a", "d_i_q", "d_i_a")}
        return DesignMatrix(
            spec=spec,
            horizon=self.k,
            country_idx=ci,
            period_idx=pi,
            y=self.y[ci, pi],
            X=X[:, keep],
            names=tuple(names[j] for j in keep),
            dropped=dropped,
            roles=roles,
            regime_values=regime_values,
            countries=countries,
            periods=self.panel.periods,
        )


def build_design(
    panel: PanelDataset,
    regimes: RegimeVariables,
    spec: ModelSpec,
    k: int,
    window=None,
    require: Iterable[str] = (),
) -> DesignMatrix:
    """Design matrix for ``spec`` at horizon ``k``.

    Rows are the (country, base period) pairs with a complete outcome
    ``t + k`` and complete regressors; ``require`` names extra regime series
    that must also be observed (used to force a common sample).
    """
    grids = _HorizonGrids(panel, regimes, spec, k)
    return grids.design(spec.form, grids.sample_mask([spec.form], window, require))


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True, eq=False)
class HorizonFit:
    """Least-squares fit of one design.

    ``bandwidth`` is the HAC lag window used by :attr:`robust_cov`; it defaults
    to the horizon.
    """

    design: DesignMatrix
    coef: np.ndarray
    resid: np.ndarray
    r_factor: np.ndarray
    bandwidth: int
    dof_adjust: int = 0

    @property
    def spec(self) -> ModelSpec:
        return self.design.spec

    @property
    def horizon(self) -> int:
        return self.design.horizon

    @property
    def names(self) -> tuple:
        return self.design.names

    @property
    def T_eff(self) -> int:
        return self.design.T_eff

    @property
    def dim(self) -> int:
        return self.design.dim

    @property
    def ssr(self) -> float:
        return float(self.resid @ self.resid)

    @property
    def sigma2_ols(self) -> float:
        return self.ssr / (self.T_eff - self.dim - self.dof_adjust)

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.names, self.coef))

    @property
    def fitted(self) -> np.ndarray:
        return self.design.y - self.resid

    def term(self, name: str) -> float:
        """Coefficient by name; pruned columns report 0."""
        if name in self.design.dropped:
            return 0.0
        return float(self.coef[self.names.index(name)])

    @cached_property
    def xtx_inv(self) -> np.ndarray:
        rinv = solve_triangular(self.r_factor, np.eye(self.dim))
        return rinv @ rinv.T

    @cached_property
    def leverage(self) -> np.ndarray:
        """Diagonal of the hat matrix."""
        q = solve_triangular(self.r_factor, self.design.X.T, trans="T")
        return np.einsum("ij,ij->j", q, q)

    @cached_property
    def robust_cov(self):
        from .inference import robust_cov

        return robust_cov(self, self.bandwidth)

    def se(self, name: str) -> float:
        return self.robust_cov.se(name)

    def predict(self, design: DesignMatrix) -> np.ndarray:
        """Fitted values for another design of the same spec (columns matched by name)."""
        coefs = self.coefficients
        out = np.zeros(design.T_eff)
        for j, n in enumerate(design.names):
            out += design.X[:, j] * coefs.get(n, 0.0)
        return out


def fit_horizon(design: DesignMatrix, bandwidth: int | None = None) -> HorizonFit:
    """Least squares via a thin QR decomposition."""
    n, p = design.X.shape
    if n <= p:
        raise InsufficientDegreesOfFreedom(
            f"{design.spec.form} horizon {design.horizon}: T_eff={n} not above dim={p}"
        )
    q, r = np.linalg.qr(design.X)
    d = np.abs(np.diag(r))
    if (d <= PRUNE_TOL * d.max()).any():
        raise RankDeficientAfterPruning(
            f"{design.spec.form} horizon {design.horizon}: design rank deficient after pruning"
        )
    coef = solve_triangular(r, q.T @ design.y)
    resid = design.y - design.X @ coef
    return HorizonFit(design, coef, resid, r, design.horizon if bandwidth is None else int(bandwidth))


def fit_models(
    panel: PanelDataset,
    regimes: RegimeVariables,
    spec: ModelSpec,
    k: int,
    forms: Sequence[str] = FORMS,
    window=None,
    bandwidth: int | None = None,
) -> dict:
    """Fit several forms on the intersection sample at horizon ``k``."""
    grids = _HorizonGrids(panel, regimes, spec, k)
    mask = grids.sample_mask(forms, window)
    return {f: fit_horizon(grids.design(f, mask), bandwidth) for f in forms}


# ---------------------------------------------------------------------------
# impulse responses


@dataclass(frozen=True)
class Regime:
    """Where to evaluate a marginal effect.

    ``indicator`` feeds the sign indicator of forms A, B, E; ``value`` feeds the
    rate change of forms C, D, E.
    """

    label: str
    indicator: int | None = None
    value: float | None = None

    @classmethod
    def loosening(cls, value: float | None = None) -> "Regime":
        return cls("loosening", 1, value)

    @classmethod
    def tightening(cls, value: float | None = None) -> "Regime":
        return cls("tightening", 0, value)

    @classmethod
    def at_value(cls, value: float, indicator: int | None = None) -> "Regime":
        return cls(f"at_value({value:g})", indicator, value)


@dataclass(frozen=True)
class EvaluationPoints:
    """First and third quartiles of the quarterly and annual rate changes."""

    quarterly: tuple
    annual: tuple


PAPER_EVALUATION_POINTS = EvaluationPoints((-0.40, 0.23), (-1.35, 0.66))


def sample_quartiles(panel: PanelDataset, regimes: RegimeVariables, window=None) -> EvaluationPoints:
    """Pooled in-window empirical quartiles of the rate changes."""
    m = panel.present & panel.window_mask(window)[None, :]

    def q(g):
        v = g[m]
        v = v[~np.isnan(v)]
        return tuple(float(x) for x in np.percentile(v, [25, 75]))

    return EvaluationPoints(q(regimes.d_i_q), q(regimes.d_i_a))


def standard_regimes(form: str, points: EvaluationPoints) -> dict:
    """Loosening/tightening evaluation regimes for ``form``.

    Indicator forms use the indicator; rate-change forms use the first
    (loosening) and third (tightening) quartile.
    """
    if form in ("Baseline", "A", "B"):
        return {"loosening": Regime.loosening(), "tightening": Regime.tightening()}
    q = points.annual if form == "D" else points.quarterly
    return {"loosening": Regime.loosening(q[0]), "tightening": Regime.tightening(q[1])}


def effect_loadings(form: str, values: Mapping[str, np.ndarray | float]) -> np.ndarray:
    """Derivative of the marginal effect w.r.t. (delta1, delta3, delta4, delta5).

    Returns an array ``(n, 1 + n_interactions)`` with a leading column of ones.
    """
    inter = FORM_INTERACTIONS[form]
    n = np.broadcast(*[np.asarray(values[v]) for f in inter for v in f]).size if inter else None
    first = np.ones(n if n is not None else 1)
    cols = [first]
    for factors in inter:
        c = np.ones_like(first)
        for v in factors:
            c = c * np.asarray(values[v], dtype=float)
        cols.append(c)
    return np.column_stack(cols)


def effect_terms(design: DesignMatrix) -> tuple:
    """Column names matching the columns of :func:`effect_loadings`."""
    return (design.roles["delta1"],) + tuple(design.roles[r] for r in DELTA_ROLES[2:] if r in design.roles)


def _regime_values(form: str, regime: Regime) -> dict:
    inter = regime_variables_for([form])
    out = {}
    for v in inter:
        src = regime.indicator if v in INDICATOR_VARS else regime.value
        if src is None:
            kind = "indicator" if v in INDICATOR_VARS else "rate-change value"
            raise RegimeMismatch(f"form {form} needs a {kind} but regime {regime.label!r} has none")
        out[v] = float(src)
    return out


@dataclass(frozen=True)
class IrfPoint:
    """Marginal effect of a unit policy change at one horizon and regime."""

    horizon: int
    regime: Regime
    value: float
    se: float
    gradient: Mapping[str, float] = field(default_factory=dict)


def irf_point(fit: HorizonFit, regime: Regime) -> IrfPoint:
    """delta1 (+ interaction coefficients times regime values), delta-method SE."""
    form = fit.spec.form
    load = effect_loadings(form, _regime_values(form, regime))[0]
    terms = effect_terms(fit.design)
    grad = {t: float(g) for t, g in zip(terms, load)}
    value = sum(g * fit.term(t) for t, g in grad.items())
    live = [t for t in grad if t not in fit.design.dropped]
    cov = fit.robust_cov.sub(live)
    g = np.array([grad[t] for t in live])
    se = float(np.sqrt(max(g @ cov @ g, 0.0)))
    return IrfPoint(fit.horizon, regime, float(value), se, grad)


# ---------------------------------------------------------------------------
# multi-horizon


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    """Fits per horizon plus horizons that could not be estimated."""

    spec: ModelSpec
    fits: Mapping[int, HorizonFit]
    failures: Mapping[int, str]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for k in sorted(self.fits):
            fit = self.fits[k]
            for name in fit.names:
                rows.append(
                    {
                        "outcome": self.spec.outcome,
                        "policy": self.spec.policy,
                        "model": self.spec.form,
                        "horizon": k,
                        "term": name,
                        "coef": fit.term(name),
                        "se": fit.se(name),
                    }
                )
        return pd.DataFrame(rows, columns=["outcome", "policy", "model", "horizon", "term", "coef", "se"])


def fit_projection(
    panel: PanelDataset,
    regimes: RegimeVariables,
    spec: ModelSpec,
    horizons: Iterable[int] = HORIZONS,
    window=None,
    bandwidth: int | None = None,
) -> ProjectionResult:
    """One fit per horizon; empty or under-identified horizons are recorded in ``failures``."""
    fits, failures = {}, {}
    for k in sorted(set(horizons)):
        if not (1 <= k <= MAX_HORIZON):
            raise InvalidSpec(f"horizon must be in 1..{MAX_HORIZON}, got {k}")
        try:
            fits[k] = fit_horizon(build_design(panel, regimes, spec, k, window), bandwidth)
        except (EmptyDesign, InsufficientDegreesOfFreedom) as exc:
            failures[k] = f"{exc.code}: {exc}"
    return ProjectionResult(spec, fits, failures)

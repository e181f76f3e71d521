"""Mallows C_p (and leave-one-out CV) weights over candidate projections."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DegenerateSigma2Warning,
    DimensionMismatch,
    InvalidWeights,
    LeverageOne,
    ModelSetMismatch,
    NoConvergenceWarning,
    NonPositiveDf,
    SampleMismatch,
    SolverError,
)
from .inference import joint_covariance
from .projection import CANDIDATE_FORMS, FORM_INTERACTIONS, HorizonFit, IrfPoint

ENUMERATION_MAX_MODELS = 8
FEASIBILITY_TOL = 1e-12
TIE_RTOL = 1e-12
LEVERAGE_TOL = 1e-10
GAP_TOL = 1e-10


def estimate_sigma2(largest_fit: HorizonFit) -> float:
    """Residual variance of the largest model, ``SSR / (T_eff - dim)``.

    Extra estimated parameters recorded in ``dof_adjust`` (factor columns) are
    subtracted from the degrees of freedom as well.
    """
    df = largest_fit.T_eff - largest_fit.dim - largest_fit.dof_adjust
    if df <= 0:
        raise NonPositiveDf(f"T_eff={largest_fit.T_eff} leaves {df} residual degrees of freedom")
    s2 = largest_fit.ssr / df
    if s2 == 0.0:
        warnings.warn("largest model fits exactly; Mallows penalty vanishes", DegenerateSigma2Warning, stacklevel=2)
    return s2


def largest_model(models: Sequence[str], dims: Sequence[int]) -> str:
    """Model with most columns; ties go to more interaction terms, then the later model."""

    def key(j):
        m = models[j]
        return (dims[j], len(FORM_INTERACTIONS.get(m, ())), j)

    return models[max(range(len(models)), key=key)]


def loo_residuals(fit: HorizonFit) -> np.ndarray:
    """Leave-one-out residuals ``u_t / (1 - h_tt)``."""
    h = fit.leverage
    bad = np.flatnonzero(h >= 1.0 - LEVERAGE_TOL)
    if bad.size:
        rows = [fit.design.row_labels()[j] for j in bad[:10]]
        raise LeverageOne(f"leverage one at rows {rows}")
    return fit.resid / (1.0 - h)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Residuals, dimensions and variance estimate of the candidate models at one horizon."""

    models: tuple
    dims: np.ndarray
    residuals: np.ndarray
    sigma2: float
    largest: str = ""
    fits: Mapping[str, HorizonFit] | None = None
    horizon: int = 0
    loo: np.ndarray | None = None

    def __post_init__(self):
        U = np.asarray(self.residuals, dtype=float)
        if U.ndim != 2 or U.shape[1] != len(self.models) or len(self.dims) != len(self.models):
            raise DimensionMismatch("residual matrix, dims and models disagree")
        if np.any(np.asarray(self.dims) <= 0):
            raise DimensionMismatch("dims must be positive")
        object.__setattr__(self, "residuals", U)
        object.__setattr__(self, "dims", np.asarray(self.dims, dtype=float))

    @property
    def T(self) -> int:
        return self.residuals.shape[0]

    @property
    def M(self) -> int:
        return len(self.models)

    @classmethod
    def from_fits(
        cls, fits: Mapping[str, HorizonFit], models: Sequence[str] = CANDIDATE_FORMS, sigma2: float | None = None
    ) -> "CandidateSet":
        """Candidate set from fits on one common sample.

        ``dim`` counts retained columns plus any ``dof_adjust`` (estimated factors).
        """
        models = tuple(m for m in models if m in fits)
        if not models:
            raise ModelSetMismatch("no candidate fits supplied")
        keys = fits[models[0]].design.row_keys()
        for m in models[1:]:
            if not np.array_equal(fits[m].design.row_keys(), keys):
                raise SampleMismatch("candidate fits must share the same rows")
        dims = [fits[m].dim + fits[m].dof_adjust for m in models]
        big = largest_model(models, dims)
        s2 = estimate_sigma2(fits[big]) if sigma2 is None else float(sigma2)
        U = np.column_stack([fits[m].resid for m in models])
        return cls(models, np.array(dims), U, s2, big, dict(fits), fits[models[0]].horizon)

    @classmethod
    def from_arrays(cls, residuals, dims, sigma2: float, models: Sequence[str] | None = None, loo=None):
        residuals = np.asarray(residuals, dtype=float)
        if models is None:
            models = tuple(f"m{j + 1}" for j in range(residuals.shape[1]))
        return cls(tuple(models), np.asarray(dims), residuals, float(sigma2), largest_model(models, dims), loo=loo)

    def gram(self) -> np.ndarray:
        return self.residuals.T @ self.residuals / self.T

    def penalty(self) -> np.ndarray:
        return 2.0 * self.sigma2 / self.T * self.dims

    def loo_matrix(self) -> np.ndarray:
        if self.loo is not None:
            return np.asarray(self.loo, dtype=float)
        if self.fits is None:
            raise DimensionMismatch("leave-one-out residuals need fits or an explicit matrix")
        loo = np.column_stack([loo_residuals(self.fits[m]) for m in self.models])
        object.__setattr__(self, "loo", loo)
        return loo


def _check_weights(w, M: int) -> np.ndarray:
    w = np.asarray(w, dtype=float).ravel()
    if w.size != M:
        raise DimensionMismatch(f"weight vector has {w.size} entries for {M} models")
    if np.any(w < -FEASIBILITY_TOL) or abs(w.sum() - 1.0) > 1e-10:
        raise InvalidWeights("weights must be nonnegative and sum to one")
    return w


def mallows_criterion(w, cand: CandidateSet) -> float:
    """``(1/T) sum_t (sum_m w_m u_tm)^2 + (2 sigma2 / T) sum_m w_m dim_m``."""
    w = _check_weights(w, cand.M)
    e = cand.residuals @ w
    return float(e @ e / cand.T + cand.penalty() @ w)


def cv1_criterion(w, cand: CandidateSet) -> float:
    """``(1/T) sum_t (sum_m w_m u~_tm)^2`` with leave-one-out residuals."""
    w = _check_weights(w, cand.M)
    e = cand.loo_matrix() @ w
    return float(e @ e / cand.T)


@dataclass(frozen=True)
class MallowsWeights:
    """Optimal simplex weights at one horizon."""

    horizon: int
    models: tuple
    w: np.ndarray
    criterion_value: float
    solver: str
    criterion: str = "mallows"
    sigma2: float = float("nan")
    diagnostics: tuple = field(default_factory=tuple)

    @property
    def active_set(self) -> tuple:
        return tuple(m for m, x in zip(self.models, self.w) if x > 0)

    def as_dict(self) -> dict:
        return {m: float(x) for m, x in zip(self.models, self.w)}

    def weight(self, model: str) -> float:
        return float(self.w[self.models.index(model)])


def _objective(A, b, w) -> float:
    return float(w @ A @ w + b @ w)


def _enumerate_supports(A: np.ndarray, b: np.ndarray, dims: np.ndarray) -> tuple:
    """Exact minimiser of ``w'Aw + b'w`` on the simplex by support enumeration.

    Every nonempty support gets its equality-constrained KKT solve; feasible
    candidates are compared.  A support whose KKT matrix is singular is
    skipped: the objective is then flat along a direction inside that face, so
    a smaller face attains the same value.
    """
    M = len(b)
    best = None
    notes = []
    scale = max(1.0, float(np.abs(A).max()), float(np.abs(b).max()))
    for size in range(1, M + 1):
        for S in itertools.combinations(range(M), size):
            S = list(S)
            if size == 1:
                wS = np.ones(1)
            else:
                K = np.zeros((size + 1, size + 1))
                K[:size, :size] = 2.0 * A[np.ix_(S, S)]
                K[:size, size] = 1.0
                K[size, :size] = 1.0
                rhs = np.concatenate([-b[S], [1.0]])
                try:
                    if np.linalg.cond(K / scale) > 1e13:
                        raise np.linalg.LinAlgError
                    wS = np.linalg.solve(K, rhs)[:size]
                except np.linalg.LinAlgError:
                    notes.append(f"singular KKT on support {tuple(S)}")
                    continue
                if np.any(wS < -FEASIBILITY_TOL):
                    continue
                wS = np.clip(wS, 0.0, None)
                wS /= wS.sum()
            w = np.zeros(M)
            w[S] = wS
            f = _objective(A, b, w)
            key = (float(dims[S].sum()), tuple(S))
            if best is None:
                best = (f, key, w)
                continue
            tol = TIE_RTOL * max(1.0, abs(best[0]))
            if f < best[0] - tol or (abs(f - best[0]) <= tol and key < best[1]):
                best = (f, key, w)
    if best is None:
        raise SolverError("no feasible support found")
    return best[2], tuple(notes)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _projected_gradient(A: np.ndarray, b: np.ndarray, max_iter: int = 200_000) -> tuple:
    """Accelerated projected gradient with a Frank-Wolfe duality-gap stop."""
    M = len(b)
    step = 1.0 / max(2.0 * np.linalg.eigvalsh(A).max(), 1e-300)
    x = np.full(M, 1.0 / M)
    y, t = x.copy(), 1.0
    gap = np.inf
    for it in range(max_iter):
        g = 2.0 * A @ x + b
        gap = float(g @ x - g.min())
        if gap <= GAP_TOL:
            return x, (f"projected gradient converged in {it} iterations (gap {gap:.2e})",)
        gy = 2.0 * A @ y + b
        x_new = project_simplex(y - step * gy)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + (t - 1.0) / t_new * (x_new - x)
        if _objective(A, b, x_new) > _objective(A, b, x):
            y, t_new = x_new.copy(), 1.0
        x, t = x_new, t_new
    warnings.warn(f"projected gradient stopped with duality gap {gap:.2e}", NoConvergenceWarning, stacklevel=3)
    return x, (f"projected gradient hit {max_iter} iterations (gap {gap:.2e})",)


def solve_quadratic_simplex(A, b, dims=None, solver: str | None = None) -> tuple:
    """Minimise ``w'Aw + b'w`` over the simplex; returns ``(w, solver_name, notes)``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    A = 0.5 * (A + A.T)
    M = b.size
    dims = np.zeros(M) if dims is None else np.asarray(dims, dtype=float)
    if solver is None:
        solver = "active-set-enumeration" if M <= ENUMERATION_MAX_MODELS else "projected-gradient"
    if solver == "active-set-enumeration":
        w, notes = _enumerate_supports(A, b, dims)
    elif solver == "projected-gradient":
        w, notes = _projected_gradient(A, b)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    if np.any(w < -FEASIBILITY_TOL):
        raise InvalidWeights("solver returned negative weights")
    w = np.clip(w, 0.0, None)
    return w / w.sum(), solver, notes


def solve_weights(cand: CandidateSet, criterion: str = "mallows", solver: str | None = None) -> MallowsWeights:
    """Optimal weights under the Mallows (default) or ``"cv1"`` criterion."""
    if criterion == "mallows":
        A, b = cand.gram(), cand.penalty()
    elif criterion == "cv1":
        L = cand.loo_matrix()
        A, b = L.T @ L / cand.T, np.zeros(cand.M)
    else:
        raise ValueError(f"criterion must be 'mallows' or 'cv1', got {criterion!r}")
    w, name, notes = solve_quadratic_simplex(A, b, cand.dims, solver)
    value = mallows_criterion(w, cand) if criterion == "mallows" else cv1_criterion(w, cand)
    return MallowsWeights(cand.horizon, cand.models, w, value, name, criterion, cand.sigma2, notes)


def weights_frame(outcome: str, policy: str, weights: Mapping[int, MallowsWeights]) -> pd.DataFrame:
    rows = []
    for k in sorted(weights):
        mw = weights[k]
        for m, x in zip(mw.models, mw.w):
            rows.append(
                {"outcome": outcome, "policy": policy, "horizon": k, "model": m, "weight": float(x),
                 "criterion": mw.criterion_value}
            )
    return pd.DataFrame(rows, columns=["outcome", "policy", "horizon", "model", "weight", "criterion"])


# ---------------------------------------------------------------------------
# averaged responses


@dataclass(frozen=True, eq=False)
class AveragedIrf:
    """Weighted responses per (horizon, regime) with the per-model inputs.

    Standard errors hold the weights fixed.
    """

    horizons: tuple
    regimes: tuple
    value: Mapping[tuple, float]
    se: Mapping[tuple, float]
    points: Mapping[int, Mapping[str, Mapping[str, IrfPoint]]]
    weights: Mapping[int, MallowsWeights]

    def path(self, regime: str) -> np.ndarray:
        return np.array([self.value[(k, regime)] for k in self.horizons])

    def to_frame(self, outcome: str, policy: str) -> pd.DataFrame:
        rows = []
        for k in self.horizons:
            for r in self.regimes:
                rows.append(
                    {"outcome": outcome, "policy": policy, "model": "average", "horizon": k, "regime": r,
                     "value": self.value[(k, r)], "se": self.se[(k, r)]}
                )
                for m, pts in self.points[k].items():
                    p = pts[r]
                    rows.append(
                        {"outcome": outcome, "policy": policy, "model": m, "horizon": k, "regime": r,
                         "value": p.value, "se": p.se}
                    )
        return pd.DataFrame(rows, columns=["outcome", "policy", "model", "horizon", "regime", "value", "se"])


def averaged_irf(
    weights: Mapping[int, MallowsWeights],
    points: Mapping[int, Mapping[str, Mapping[str, IrfPoint]]],
    fits: Mapping[int, Mapping[str, HorizonFit]] | None = None,
    bandwidth: int | None = None,
) -> AveragedIrf:
    """Convex combination of per-model responses.

    Parameters
    ----------
    weights : mapping horizon -> MallowsWeights
    points : mapping horizon -> model -> regime label -> IrfPoint
    fits : mapping horizon -> model -> HorizonFit, optional
        Needed for standard errors, which use the joint covariance of all
        models' coefficients; without fits the SE column is NaN.
    """
    if set(weights) != set(points):
        raise ModelSetMismatch("weights and points cover different horizons")
    horizons = tuple(sorted(weights))
    regimes = None
    value, se = {}, {}
    for k in horizons:
        mw = weights[k]
        if set(mw.models) != set(points[k]):
            raise ModelSetMismatch(f"horizon {k}: weights over {mw.models}, points over {tuple(points[k])}")
        labels = tuple(next(iter(points[k].values())))
        regimes = labels if regimes is None else regimes
        for r in labels:
            value[(k, r)] = float(sum(mw.weight(m) * points[k][m][r].value for m in mw.models))
            if fits is None:
                se[(k, r)] = float("nan")
                continue
            terms = {m: list(points[k][m][r].gradient) for m in mw.models if mw.weight(m) > 0}
            lab, cov = joint_covariance({m: fits[k][m] for m in terms}, terms, bandwidth)
            g = np.array([mw.weight(m) * points[k][m][r].gradient[t] for m, t in lab])
            se[(k, r)] = float(np.sqrt(max(g @ cov @ g, 0.0)))
    return AveragedIrf(horizons, regimes or (), value, se, points, weights)

"""Projections with an interactive-effects error ``lambda_i' f_t``.

Coefficients and factors are estimated by alternating least squares given the
factor component and principal components of the residual panel given the
coefficients.  The factor count is chosen by the Bai-Ng ``IC_p1`` criterion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from .errors import NoConvergenceWarning, RMaxTooLarge, Unbalanced
from .projection import DesignMatrix, HorizonFit, fit_horizon

REL_TOL = 1e-9
EXACT_FIT = 1e-24
MAX_ITER = 500
N_RANDOM_STARTS = 5


@dataclass(frozen=True, eq=False)
class FactorFit:
    """Interactive-effects fit of one design.

    ``fit`` carries the coefficients with defactored residuals and
    ``dof_adjust = r``; ``factors`` is ``T x r`` (``F'F/T = I``) and
    ``loadings`` is ``N x r`` with ``Lambda'Lambda`` diagonal.
    """

    fit: HorizonFit
    factors: np.ndarray
    loadings: np.ndarray
    r: int
    ssr_path: tuple
    converged: bool
    iterations: int
    start: int
    dropped_rows: tuple

    @property
    def ssr(self) -> float:
        return self.fit.ssr

    def projector(self) -> np.ndarray:
        T = self.factors.shape[0]
        return self.factors @ self.factors.T / T


def balance(design: DesignMatrix) -> tuple:
    """Keep only base periods observed for every country in the design.

    Returns ``(balanced_design, dropped_row_labels)``.  Raises
    :class:`Unbalanced` if nothing survives.
    """
    countries = np.unique(design.country_idx)
    periods, counts = np.unique(design.period_idx, return_counts=True)
    full = periods[counts == countries.size]
    keep = np.isin(design.period_idx, full)
    labels = design.row_labels()
    dropped = tuple(labels[j] for j in np.flatnonzero(~keep))
    if full.size < 2:
        raise Unbalanced(f"no balanced block: {len(dropped)} rows would be dropped, e.g. {dropped[:5]}")
    if keep.all():
        return design, ()
    return design.subset(keep), dropped


def _grid_index(design: DesignMatrix) -> tuple:
    ci = np.unique(design.country_idx, return_inverse=True)[1]
    ti = np.unique(design.period_idx, return_inverse=True)[1]
    return ci, ti, ci.max() + 1, ti.max() + 1


def _pc_step(E: np.ndarray, r: int) -> tuple:
    """Best rank-``r`` approximation ``Lambda F'`` of the ``N x T`` matrix ``E``."""
    T = E.shape[1]
    U, s, Vt = np.linalg.svd(E, full_matrices=False)
    F = np.sqrt(T) * Vt[:r].T
    L = U[:, :r] * s[:r] / np.sqrt(T)
    return F, L, float(np.sum(s[r:] ** 2))


def _alternate(X, y, q, R, ci, ti, N, T, r, F, L, tol, max_iter) -> tuple:
    path, beta_prev = [], None
    for it in range(1, max_iter + 1):
        common = (L @ F.T)[ci, ti]
        beta = solve_triangular(R, q.T @ (y - common))
        E = np.zeros((N, T))
        E[ci, ti] = y - X @ beta
        F_new, L_new, ssr = _pc_step(E, r)
        if path and ssr > path[-1]:
            # rounding noise at the optimum; keep the previous iterate
            return beta_prev, F, L, path, True, it - 1
        path.append(ssr)
        F, L, beta_prev = F_new, L_new, beta
        scale = max(float(y @ y), 1e-300)
        if ssr <= EXACT_FIT * scale:
            return beta, F, L, path, True, it
        if len(path) > 1 and (path[-2] - ssr) <= tol * path[-2]:
            return beta, F, L, path, True, it
    return beta_prev, F, L, path, False, max_iter


def estimate_interactive(
    design: DesignMatrix,
    r: int,
    seed: int = 0,
    n_random_starts: int = N_RANDOM_STARTS,
    tol: float = REL_TOL,
    max_iter: int = MAX_ITER,
) -> FactorFit:
    """Least squares with ``r`` common factors in the error.

    Parameters
    ----------
    design : DesignMatrix
        Rows are reshaped to a country-by-period panel; periods not observed
        for every country are dropped first and reported in ``dropped_rows``.
    r : int
        Factor count.  ``r = 0`` returns the ordinary fit unchanged.
    seed : int
        Seeds the random starts (one independent stream per start).
    """
    if r < 0:
        raise ValueError("factor count must be nonnegative")
    if r == 0:
        fit = fit_horizon(design)
        return FactorFit(fit, np.zeros((0, 0)), np.zeros((0, 0)), 0, (fit.ssr,), True, 0, 0, ())
    design, dropped = balance(design)
    ci, ti, N, T = _grid_index(design)
    if r > min(N, T):
        raise RMaxTooLarge(f"r={r} exceeds min(N, T)={min(N, T)}")
    base = fit_horizon(design)
    X, y = design.X, design.y
    q, R = np.linalg.qr(X)

    E0 = np.zeros((N, T))
    E0[ci, ti] = base.resid
    starts = [_pc_step(E0, r)[:2]]
    for s in range(1, n_random_starts + 1):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(s,)))
        F0 = np.linalg.qr(rng.standard_normal((T, r)))[0] * np.sqrt(T)
        starts.append((F0, E0 @ F0 / T))

    best = None
    for j, (F0, L0) in enumerate(starts):
        res = _alternate(X, y, q, R, ci, ti, N, T, r, F0, L0, tol, max_iter)
        if best is None or res[3][-1] < best[1][3][-1]:
            best = (j, res)
    j, (beta, F, L, path, converged, iters) = best
    if not converged:
        warnings.warn(f"factor alternation stopped after {max_iter} iterations", NoConvergenceWarning, stacklevel=2)
    resid = y - X @ beta - (L @ F.T)[ci, ti]
    fit = HorizonFit(design, beta, resid, base.r_factor, base.bandwidth, dof_adjust=r)
    return FactorFit(fit, F, L, r, tuple(path), converged, iters, j, dropped)


def ic_p1(ssr: float, N: int, T: int, r: int) -> float:
    """``ln(SSR / NT) + r (N + T)/(NT) ln(NT / (N + T))``."""
    NT = N * T
    return float(np.log(ssr / NT) + r * (N + T) / NT * np.log(NT / (N + T)))


def select_factor_number(design: DesignMatrix, r_max: int, seed: int = 0, **kwargs) -> tuple:
    """Factor count minimising ``IC_p1`` over ``0..r_max`` (ties to fewer factors).

    Returns ``(r, fits)`` with the fitted :class:`FactorFit` per candidate count.
    """
    bal, _ = balance(design)
    _, _, N, T = _grid_index(bal)
    if r_max < 0 or 2 * r_max > min(N, T):
        raise RMaxTooLarge(f"r_max={r_max} above min(N, T)/2 = {min(N, T) / 2}")
    fits, ics = {}, {}
    for r in range(r_max + 1):
        fits[r] = estimate_interactive(bal, r, seed, **kwargs)
        ics[r] = ic_p1(fits[r].ssr, N, T, r)
    r_best = min(ics, key=lambda r: (ics[r], r))
    return r_best, fits


def defactor_fits(fits: Mapping[str, HorizonFit], factors, r_max: int = 4, seed: int = 0) -> tuple:
    """Replace each model's fit by its interactive-effects fit.

    ``factors`` is a fixed count or ``"select"``.  All models are balanced on
    the same rows so they still share one sample.  Returns
    ``(new_fits, info)`` where ``info[model]`` is the chosen :class:`FactorFit`.
    """
    out, info = {}, {}
    for m, f in fits.items():
        bal, _ = balance(f.design)
        if factors == "select":
            r, cands = select_factor_number(bal, r_max, seed)
            ff = cands[r]
        else:
            ff = estimate_interactive(bal, int(factors), seed)
        out[m] = replace(ff.fit, bandwidth=f.bandwidth)
        info[m] = ff
    return out, info


def diagnostics_frame(info: Mapping[int, Mapping[str, FactorFit]]) -> pd.DataFrame:
    """One row per (horizon, model): ``horizon,model,r,ssr,iterations,converged``."""
    rows = []
    for k in sorted(info):
        for m, ff in info[k].items():
            rows.append({"horizon": k, "model": m, "r": ff.r, "ssr": ff.ssr, "iterations": ff.iterations,
                         "converged": bool(ff.converged)})
    return pd.DataFrame(rows, columns=["horizon", "model", "r", "ssr", "iterations", "converged"])


def averaged_irf_with_factors(panel, regimes, spec, options=None, points=None):
    """Averaged responses and weights with factor-augmented candidate fits.

    Returns the :class:`~lpmallows.pipeline.CellAnalysis` and the factor
    diagnostics table.  Options default to factor-number selection.
    """
    from .pipeline import PipelineOptions, analyze_cell

    if options is None:
        options = PipelineOptions(factors="select")
    elif options.factors is None:
        options = replace(options, factors="select")
    cell = analyze_cell(panel, regimes, spec, options, points)
    diag = diagnostics_frame({k: h.factor_info for k, h in cell.horizons.items()})
    return cell, diag

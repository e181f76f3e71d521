"""End-to-end analysis of one (outcome, policy) cell across horizons."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import pandas as pd

from .data import PanelDataset, RegimeVariables, format_period
from .errors import AllPolicyVarianceZero, EmptyDesign, InsufficientDegreesOfFreedom, NonPositiveDf
from .inference import DEFAULT_ALPHA, PointTest, TestReport, build_test_report, equality_test, zero_test
from .mallows import AveragedIrf, CandidateSet, MallowsWeights, averaged_irf, solve_weights, weights_frame
from .projection import (
    CANDIDATE_FORMS,
    FORMS,
    HORIZONS,
    PAPER_EVALUATION_POINTS,
    EvaluationPoints,
    HorizonFit,
    ModelSpec,
    fit_models,
    irf_point,
    sample_quartiles,
    standard_regimes,
)

RECOVERABLE = (EmptyDesign, InsufficientDegreesOfFreedom, AllPolicyVarianceZero, NonPositiveDf)


@dataclass(frozen=True)
class PipelineOptions:
    """Knobs shared by every cell of a run.

    ``factors`` is ``None`` (no factor structure), an integer factor count, or
    ``"select"`` for information-criterion selection up to ``r_max``.
    """

    horizons: tuple = HORIZONS
    window: tuple | None = None
    criterion: str = "mallows"
    bandwidth: int | None = None
    alpha: float = DEFAULT_ALPHA
    evaluation: str = "sample"
    tests: bool = True
    factors: int | str | None = None
    r_max: int = 4
    seed: int = 0

    def evaluation_points(self, panel: PanelDataset, regimes: RegimeVariables) -> EvaluationPoints:
        if self.evaluation == "paper":
            return PAPER_EVALUATION_POINTS
        if self.evaluation == "sample":
            return sample_quartiles(panel, regimes, self.window)
        raise ValueError(f"evaluation must be 'sample' or 'paper', got {self.evaluation!r}")


@dataclass(frozen=True, eq=False)
class HorizonAnalysis:
    fits: Mapping[str, HorizonFit]
    candidates: CandidateSet
    weights: MallowsWeights
    points: Mapping[str, Mapping[str, object]]
    equality: PointTest | None = None
    zero: PointTest | None = None
    factor_info: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class CellAnalysis:
    """Fits, weights, averaged responses and tests for one (outcome, policy)."""

    spec: ModelSpec
    horizons: Mapping[int, HorizonAnalysis]
    failures: Mapping[int, str]
    averaged: AveragedIrf | None
    report: TestReport | None
    evaluation: EvaluationPoints

    @property
    def outcome(self) -> str:
        return self.spec.outcome

    @property
    def policy(self) -> str:
        return self.spec.policy

    def weights(self) -> dict:
        return {k: h.weights for k, h in self.horizons.items()}

    def irf_frame(self) -> pd.DataFrame:
        cols = ["outcome", "policy", "model", "horizon", "regime", "value", "se"]
        if self.averaged is None:
            return pd.DataFrame(columns=cols)
        df = self.averaged.to_frame(self.outcome, self.policy)
        rows = []
        for k, h in self.horizons.items():
            for r, p in h.points["Baseline"].items():
                rows.append([self.outcome, self.policy, "Baseline", k, r, p.value, p.se])
        df = pd.concat([df, pd.DataFrame(rows, columns=cols)], ignore_index=True)
        order = {m: i for i, m in enumerate(("average",) + FORMS)}
        df["_m"] = df["model"].map(order)
        df = df.sort_values(["horizon", "regime", "_m"], kind="stable").drop(columns="_m")
        return df.reset_index(drop=True)

    def weights_frame(self) -> pd.DataFrame:
        return weights_frame(self.outcome, self.policy, self.weights())

    def tests_frame(self) -> pd.DataFrame:
        if self.report is None:
            return pd.DataFrame(
                columns=["outcome", "policy", "horizon", "prop_accept", "raw_p_summary", "adj_method",
                         "adj_reject_frac", "verdict"]
            )
        return self.report.to_frame()

    def sample_audit(self) -> dict:
        """First and last base period and row count of each horizon's common sample."""
        out = {}
        for k, h in self.horizons.items():
            d = h.fits["Baseline"].design
            per = d.periods[d.period_idx]
            out[int(k)] = {"rows": int(d.T_eff), "first": format_period(per.min()),
                           "last": format_period(per.max())}
        return out


def analyze_horizon(
    panel: PanelDataset,
    regimes: RegimeVariables,
    spec: ModelSpec,
    k: int,
    options: PipelineOptions,
    points: EvaluationPoints,
) -> HorizonAnalysis:
    """Fit every form, solve the weights, evaluate responses and run the tests at horizon ``k``."""
    fits = fit_models(panel, regimes, spec, k, FORMS, options.window, options.bandwidth)
    factor_info = {}
    if options.factors is not None:
        from .factors import defactor_fits

        fits, factor_info = defactor_fits(fits, options.factors, options.r_max, options.seed)
    cand = CandidateSet.from_fits(fits, CANDIDATE_FORMS)
    weights = solve_weights(cand, options.criterion)
    pts = {m: {lab: irf_point(fits[m], reg) for lab, reg in standard_regimes(m, points).items()} for m in FORMS}
    eq = zero = None
    if options.tests:
        eq = equality_test(fits, weights, "Baseline", bandwidth=options.bandwidth)
        zero = zero_test(fits, weights, bandwidth=options.bandwidth)
    return HorizonAnalysis(fits, cand, weights, pts, eq, zero, factor_info)


def analyze_cell(
    panel: PanelDataset,
    regimes: RegimeVariables,
    spec: ModelSpec,
    options: PipelineOptions = PipelineOptions(),
    points: EvaluationPoints | None = None,
) -> CellAnalysis:
    """Run the whole chain for one (outcome, policy) over ``options.horizons``.

    Horizons whose design is empty or under-identified are listed in
    ``failures`` instead of aborting the cell.
    """
    if points is None:
        points = options.evaluation_points(panel, regimes)
    done, failures = {}, {}
    for k in sorted(set(options.horizons)):
        try:
            done[k] = analyze_horizon(panel, regimes, spec, k, options, points)
        except RECOVERABLE as exc:
            failures[k] = f"{exc.code}: {exc}"
    averaged = report = None
    if done:
        averaged = averaged_irf(
            {k: h.weights for k, h in done.items()},
            {k: {m: h.points[m] for m in CANDIDATE_FORMS} for k, h in done.items()},
            {k: h.fits for k, h in done.items()},
            options.bandwidth,
        )
        if options.tests:
            report = build_test_report(spec.outcome, spec.policy, {k: h.equality for k, h in done.items()},
                                       options.alpha)
    return CellAnalysis(spec, done, failures, averaged, report, points)


def bootstrap_averaged_irf(
    panel: PanelDataset,
    regimes: RegimeVariables,
    spec: ModelSpec,
    options: PipelineOptions,
    reps: int,
    seed: int,
    points: EvaluationPoints | None = None,
) -> pd.DataFrame:
    """Country-block bootstrap of the averaged response.

    Countries are drawn with replacement and everything, weights included, is
    re-estimated.  Returns ``horizon, regime, boot_mean, boot_se, reps_ok``.
    """
    if points is None:
        points = options.evaluation_points(panel, regimes)
    opts = replace(options, tests=False)
    N = len(panel.countries)
    draws = {}
    for b in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        idx = np.sort(rng.integers(0, N, N))
        labels = [f"{panel.countries[i]}#{j}" for j, i in enumerate(idx)]
        sub = panel.select_countries(idx, labels)
        cell = analyze_cell(sub, regimes.select_countries(idx), spec, opts, points)
        if cell.averaged is None:
            continue
        for key, v in cell.averaged.value.items():
            draws.setdefault(key, []).append(v)
    rows = []
    for (k, r), v in sorted(draws.items()):
        v = np.asarray(v)
        rows.append({"horizon": k, "regime": r, "boot_mean": v.mean(),
                     "boot_se": v.std(ddof=1) if v.size > 1 else np.nan, "reps_ok": v.size})
    return pd.DataFrame(rows, columns=["horizon", "regime", "boot_mean", "boot_se", "reps_ok"])

"""Panel local projections with Mallows model averaging over state-dependent forms."""

from __future__ import annotations

__version__ = "0.1.0"

from .data import PanelDataset, RegimeVariables, build_regimes, hp_filter, load_panel, transform_panel
from .inference import adjust_pvalues, equality_test, robust_cov, zero_test
from .mallows import CandidateSet, averaged_irf, solve_weights
from .pipeline import PipelineOptions, analyze_cell
from .projection import FORMS, ModelSpec, build_design, fit_horizon, fit_models
from .synthetic import DgpConfig, McOptions, generate_dgp, run_monte_carlo

__all__ = [
    "__version__", "PanelDataset", "RegimeVariables", "build_regimes", "hp_filter", "load_panel",
    "transform_panel", "adjust_pvalues", "equality_test", "robust_cov", "zero_test", "CandidateSet",
    "averaged_irf", "solve_weights", "PipelineOptions", "analyze_cell", "FORMS", "ModelSpec", "build_design",
    "fit_horizon", "fit_models", "DgpConfig", "McOptions", "generate_dgp", "run_monte_carlo",
]

"""Command-line front end.

Every subcommand reads a YAML config (``--config``) and writes plot-ready CSV
tables to ``--out``.  Failures print a JSON error report on stderr, write
``error.json`` into the output directory and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .data import (
    HP_LAMBDA_QUARTERLY,
    build_regimes,
    hp_filter_panel,
    load_forecasts,
    load_panel,
    merge_anticipation,
    output_gap,
    parse_period,
    summary_stats,
    transform_panel,
)
from .errors import ConfigError, LpMallowsError
from .inference import DEFAULT_ALPHA
from .pipeline import PipelineOptions, analyze_cell, bootstrap_averaged_irf
from .projection import DEFAULT_CONTROLS, FORMS, HORIZONS, ModelSpec, fit_projection

SCHEMA_VERSION = "1"
DEFAULT_WINDOWS = {"full": None, "pre": [None, "1998-Q4"], "post": ["1999-Q1", None]}
SCHEMAS = {
    "irf.csv": ["outcome", "policy", "model", "horizon", "regime", "value", "se"],
    "weights.csv": ["outcome", "policy", "horizon", "model", "weight", "criterion"],
    "tests.csv": ["outcome", "policy", "horizon", "prop_accept", "raw_p_summary", "adj_method", "adj_reject_frac",
                  "verdict"],
    "fit.csv": ["outcome", "policy", "model", "horizon", "term", "coef", "se"],
}
FLOAT_FORMAT = "%.17g"

DEFAULT_SERIES = {
    "gdp": ["gdp", "log_diff_100"],
    "inflation": ["cpi", "log_diff_100"],
    "unemployment": ["unemployment", "log_diff_100"],
    "reer": ["reer", "log_diff_100"],
    "d_rate": ["rate", "diff"],
    "rr": ["rr", "log_diff_100"],
    "almp": ["almp", "log_diff_100"],
    "epl": ["epl", "log_diff_100"],
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; relative paths resolve against the config file."""

    data: str = ""
    forecasts: str | None = None
    series: dict = field(default_factory=lambda: dict(DEFAULT_SERIES))
    rate_column: str = "rate"
    gdp_level_column: str = "gdp"
    outcomes: tuple = ("gdp", "inflation", "unemployment", "reer")
    policies: tuple = ("rr", "almp", "epl")
    controls: tuple = DEFAULT_CONTROLS
    models: tuple = FORMS
    horizons: tuple = HORIZONS
    windows: dict = field(default_factory=lambda: dict(DEFAULT_WINDOWS))
    alpha: float = DEFAULT_ALPHA
    hp_lambda: float = HP_LAMBDA_QUARTERLY
    bandwidth: int | str = "horizon"
    evaluation: str = "sample"
    criterion: str = "mallows"
    anticipation: bool = False
    output_gap: bool = False
    factors: int | str | None = None
    r_max: int = 4
    bootstrap: int = 0
    seed: int | None = None
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        known = {f.name for f in fields(cls)} - {"base_dir"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        d = dict(d)
        for key in ("outcomes", "policies", "controls", "models"):
            if key in d:
                d[key] = tuple(d[key])
        if "horizons" in d:
            d["horizons"] = tuple(int(k) for k in d["horizons"])
        cfg = cls(**d, base_dir=str(base_dir))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.data:
            raise ConfigError("config must name a data file")
        if set(self.models) != set(FORMS):
            raise ConfigError(f"models must be the full set {FORMS}")
        if not self.horizons or not all(1 <= k <= 12 for k in self.horizons):
            raise ConfigError("horizons must be a nonempty subset of 1..12")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.evaluation not in ("sample", "paper"):
            raise ConfigError("evaluation must be 'sample' or 'paper'")
        if self.criterion not in ("mallows", "cv1"):
            raise ConfigError("criterion must be 'mallows' or 'cv1'")
        if not (self.bandwidth == "horizon" or (isinstance(self.bandwidth, int) and self.bandwidth >= 0)):
            raise ConfigError("bandwidth must be 'horizon' or a nonnegative integer")
        if self.factors not in (None, "select") and not (isinstance(self.factors, int) and self.factors >= 0):
            raise ConfigError("factors must be null, 'select' or a nonnegative integer")
        if self.bootstrap < 0:
            raise ConfigError("bootstrap must be a nonnegative replication count")
        if self.hp_lambda <= 0:
            raise ConfigError("hp_lambda must be positive")
        if self.anticipation and not self.forecasts:
            raise ConfigError("anticipation controls need a forecasts file")
        if not self.windows:
            raise ConfigError("at least one window is required")
        for name, w in self.windows.items():
            if w is not None:
                if len(w) != 2:
                    raise ConfigError(f"window {name!r} must be [start, end]")
                for p in w:
                    if p is not None:
                        parse_period(p)

    @property
    def needs_seed(self) -> bool:
        return self.bootstrap > 0 or self.factors is not None

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def demo_config_path() -> Path:
    return Path(str(resources.files("lpmallows") / "data" / "demo_config.yaml"))


def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {str(path)!r} is not valid YAML: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    return d


def load_run_config(path, seed: int | None = None) -> RunConfig:
    cfg = RunConfig.from_dict(load_yaml(path), base_dir=str(Path(path).resolve().parent))
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if cfg.needs_seed and cfg.seed is None:
        raise ConfigError("bootstrap and factor estimation need an explicit seed (config 'seed' or --seed)")
    return cfg


def prepare_panel(cfg: RunConfig) -> tuple:
    """Load levels, add transformed series and optional extra controls.

    Returns ``(panel, regimes, extra_controls)``.
    """
    raw = load_panel(cfg.path(cfg.data))
    extra, new = [], {}
    if cfg.output_gap:
        new["output_gap"] = output_gap(raw, cfg.gdp_level_column, cfg.hp_lambda)
        extra.append("output_gap")
    regimes = build_regimes(raw, cfg.rate_column)
    panel = transform_panel(raw, {k: tuple(v) for k, v in cfg.series.items()})
    if new:
        panel = panel.with_columns(new, {"output_gap": "level"})
    if cfg.anticipation:
        windows = [w for w in cfg.windows.values() if w is not None]
        span = None if len(windows) != len(cfg.windows) else (min(parse_period(w[0]) for w in windows),
                                                               max(parse_period(w[1]) for w in windows))
        panel = merge_anticipation(panel, load_forecasts(cfg.path(cfg.forecasts)), "gdp_forecast", span)
        extra.append("gdp_forecast")
    return panel, regimes, tuple(extra)


def _options(cfg: RunConfig, window) -> PipelineOptions:
    return PipelineOptions(
        horizons=tuple(cfg.horizons),
        window=tuple(window) if window is not None else None,
        criterion=cfg.criterion,
        bandwidth=None if cfg.bandwidth == "horizon" else int(cfg.bandwidth),
        alpha=cfg.alpha,
        evaluation=cfg.evaluation,
        factors=cfg.factors,
        r_max=cfg.r_max,
        seed=cfg.seed or 0,
    )


def _cells(cfg: RunConfig, extra) -> list:
    return [
        ModelSpec("Baseline", o, p, controls=cfg.controls, extra_controls=extra)
        for o in cfg.outcomes for p in cfg.policies
    ]


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _versions() -> dict:
    return {"lpmallows": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pandas": pd.__version__, "python": platform.python_version()}


def _window_dirs(cfg: RunConfig, out: Path) -> dict:
    if len(cfg.windows) == 1:
        return {name: out for name in cfg.windows}
    return {name: out / f"window={name}" for name in cfg.windows}


def _analyze_all(cfg: RunConfig, panel, regimes, extra, window, threads: int) -> list:
    opts = _options(cfg, window)
    points = opts.evaluation_points(panel, regimes)
    specs = _cells(cfg, extra)

    def job(spec):
        return analyze_cell(panel, regimes, spec, opts, points)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(job, specs))
    return [job(s) for s in specs]


def _concat(frames, columns) -> pd.DataFrame:
    frames = [f for f in frames if not f.empty]
    return pd.concat(frames, ignore_index=True)[columns] if frames else pd.DataFrame(columns=columns)


def summary_frame(panel, columns) -> pd.DataFrame:
    """Wide ``country,<series>_mean,<series>_sd`` table."""
    s = summary_stats(panel, columns)
    s.columns = [f"{a}_{b}" for a, b in s.columns]
    return s.reset_index()


def run_pipeline(cfg: RunConfig, out: Path, threads: int = 1, subset: tuple | None = None) -> dict:
    """Full run: writes irf/weights/tests/summary CSVs and ``run.json``.

    Warnings raised by the estimators are collected into ``run.json`` rather
    than printed.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        return _run_pipeline(cfg, out, threads, subset, caught)


def _run_pipeline(cfg, out, threads, subset, caught) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    panel, regimes, extra = prepare_panel(cfg)
    which = set(subset or ("irf", "weights", "tests", "summary"))
    audit, failures = {}, {}
    dirs = _window_dirs(cfg, out)
    for name, window in cfg.windows.items():
        cells = _analyze_all(cfg, panel, regimes, extra, window, threads)
        d = dirs[name]
        d.mkdir(parents=True, exist_ok=True)
        if "irf" in which:
            frames = [c.irf_frame() for c in cells]
            if cfg.bootstrap > 0:
                boots = []
                for c in cells:
                    b = bootstrap_averaged_irf(panel, regimes, c.spec, _options(cfg, window), cfg.bootstrap,
                                               int(cfg.seed), c.evaluation)
                    b.insert(0, "policy", c.policy)
                    b.insert(0, "outcome", c.outcome)
                    boots.append(b)
                _write_csv(_concat(boots, list(boots[0].columns)), d / "irf_bootstrap.csv")
            _write_csv(_concat(frames, SCHEMAS["irf.csv"]), d / "irf.csv")
        if "weights" in which:
            _write_csv(_concat([c.weights_frame() for c in cells], SCHEMAS["weights.csv"]), d / "weights.csv")
        if "tests" in which:
            _write_csv(_concat([c.tests_frame() for c in cells], SCHEMAS["tests.csv"]), d / "tests.csv")
        audit[name] = {f"{c.outcome}/{c.policy}": c.sample_audit() for c in cells}
        failures[name] = {f"{c.outcome}/{c.policy}": {str(k): v for k, v in c.failures.items()}
                          for c in cells if c.failures}
    if "summary" in which:
        cols = list(dict.fromkeys(list(cfg.outcomes) + list(cfg.policies) + list(cfg.controls)))
        _write_csv(summary_frame(panel, cols), out / "summary.csv")
    flagged = panel.zero_variance(cfg.policies)
    run = {
        "schema_version": SCHEMA_VERSION,
        "schemas": SCHEMAS,
        "config": cfg.echo(),
        "versions": _versions(),
        "seeds": {"seed": cfg.seed, "bootstrap": cfg.seed if cfg.bootstrap else None,
                  "factor_starts": cfg.seed if cfg.factors is not None else None},
        "windows": {k: list(v) if v is not None else None for k, v in cfg.windows.items()},
        "outputs": {name: str(d.relative_to(out)) if d != out else "." for name, d in dirs.items()},
        "samples": audit,
        "failures": failures,
        "zero_variance_policy": [list(x) for x in flagged],
    }
    counts = {}
    for w in caught:
        key = f"{w.category.__name__}: {w.message}"
        counts[key] = counts.get(key, 0) + 1
    run["warnings"] = dict(sorted(counts.items()))
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    return run


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    run_pipeline(cfg, Path(args.out), args.threads)


def cmd_subset(which):
    def _cmd(args):
        cfg = load_run_config(args.config, args.seed)
        run_pipeline(cfg, Path(args.out), args.threads, subset=(which,))

    return _cmd


def cmd_fit(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel, regimes, extra = prepare_panel(cfg)
    name, window = next(iter(cfg.windows.items()))
    frames = []
    for spec in _cells(cfg, extra):
        for form in FORMS:
            res = fit_projection(panel, regimes, spec.with_form(form), cfg.horizons, window,
                                 None if cfg.bandwidth == "horizon" else int(cfg.bandwidth))
            frames.append(res.to_frame())
    _write_csv(_concat(frames, SCHEMAS["fit.csv"]), out / "fit.csv")


def cmd_hpfilter(args) -> None:
    if args.input is None and args.config is None:
        raise ConfigError("hpfilter needs --input or --config")
    if args.input is not None:
        source, lamb = Path(args.input), args.hp_lambda
    else:
        cfg = load_run_config(args.config, args.seed)
        source, lamb = cfg.path(cfg.data), args.hp_lambda or cfg.hp_lambda
    lamb = HP_LAMBDA_QUARTERLY if lamb is None else lamb
    panel = load_panel(source)
    trend, cycle = hp_filter_panel(panel, args.column, lamb)
    df = panel.to_frame([args.column]).rename(columns={args.column: "value"})
    ci, pi = np.nonzero(panel.present)
    df["trend"] = trend[ci, pi]
    df["cycle"] = cycle[ci, pi]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(df, out / "hpfilter.csv")


def cmd_summary(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel, _, _ = prepare_panel(cfg)
    cols = list(dict.fromkeys(list(cfg.outcomes) + list(cfg.policies) + list(cfg.controls)))
    _write_csv(summary_frame(panel, cols), out / "summary.csv")


def cmd_simulate(args) -> None:
    from .synthetic import DgpConfig, McOptions, run_monte_carlo

    d = load_yaml(args.config)
    extra = set(d) - {"dgp", "replications", "options", "seed"}
    if extra:
        raise ConfigError(f"unknown simulation keys {sorted(extra)}")
    seed = args.seed if args.seed is not None else d.get("seed")
    if seed is None:
        raise ConfigError("simulation needs an explicit seed (config 'seed' or --seed)")
    dgp = DgpConfig.from_dict({**d.get("dgp", {}), "seed": int(seed)})
    opts = McOptions.from_dict({**d.get("options", {}), "workers": args.threads})
    report = run_monte_carlo(dgp, int(d.get("replications", 2)), opts)
    report.write(Path(args.out))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpmallows", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads across cells")
    common.add_argument("--seed", type=int, default=None, help="seed for every random component")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, text in (
        ("run", cmd_run, "full pipeline"),
        ("weights", cmd_subset("weights"), "Mallows weights per horizon"),
        ("irf", cmd_subset("irf"), "per-model and averaged responses"),
        ("test", cmd_subset("tests"), "equality tests and adjusted p-values"),
        ("summary", cmd_summary, "per-country mean and sd of transformed series"),
        ("fit", cmd_fit, "coefficients of every form and horizon"),
        ("simulate", cmd_simulate, "Monte Carlo experiment from a DGP config"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)
    hp = sub.add_parser("hpfilter", parents=[common], help="HP trend and cycle of one column")
    hp.add_argument("--input", help="wide CSV (default: the config's data file)")
    hp.add_argument("--column", required=True)
    hp.add_argument("--lambda", dest="hp_lambda", type=float, default=None)
    hp.set_defaults(func=cmd_hpfilter)
    return parser


def _report_error(out: str | None, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(text + "\n")
        except OSError:
            pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    if args.command != "hpfilter" and args.config is None:
        parser.error("--config is required")
    try:
        with threadpool_limits(limits=1):
            args.func(args)
    except LpMallowsError as exc:
        _report_error(args.out, {"status": "error", **exc.to_dict()})
        return 2
    except (OSError, ValueError) as exc:
        _report_error(args.out, {"status": "error", "code": f"cli_app.{type(exc).__name__}", "message": str(exc)})
        return 2
    except Exception as exc:  # noqa: BLE001
        _report_error(args.out, {"status": "internal_error", "code": f"cli_app.{type(exc).__name__}",
                                 "message": str(exc)})
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

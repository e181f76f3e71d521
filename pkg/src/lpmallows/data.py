"""Quarterly country panel: ingestion, transforms and derived regressors.

The panel is held on a balanced country x quarter grid.  Each series is an
``(N, P)`` float array with ``NaN`` marking a missing cell; ``present`` records
which (country, quarter) rows actually appeared in the source file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import solveh_banded

from .errors import (
    DuplicateRow,
    InteriorMissing,
    InvalidValue,
    LongFormat,
    MissingColumn,
    MissingForecast,
    MissingRateColumn,
    NonPositiveLevel,
    SeriesTooShort,
    UnparseablePeriod,
)

TRANSFORMS = ("level", "log_diff_100", "diff")
PERIOD_RE = re.compile(r"^(\d{4})-Q([1-4])$")
HP_LAMBDA_QUARTERLY = 1600.0


def parse_period(text: str) -> pd.Period:
    """Parse ``"YYYY-Qn"`` into a quarterly :class:`pandas.Period`."""
    m = PERIOD_RE.match(str(text).strip())
    if m is None:
        raise UnparseablePeriod(f"cannot parse period {text!r}; expected 'YYYY-Qn'")
    return pd.Period(year=int(m.group(1)), quarter=int(m.group(2)), freq="Q")


def format_period(p: pd.Period) -> str:
    return f"{p.year}-Q{p.quarter}"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Country x quarter panel of named series.

    Attributes
    ----------
    countries : tuple of str
        Country identifiers, sorted.
    periods : pandas.PeriodIndex
        Contiguous quarterly index shared by every series.
    values : dict
        Series name -> ``(N, P)`` float array, ``NaN`` = missing.
    present : ndarray of bool
        ``(N, P)`` mask of rows that exist in the source.
    meta : dict
        Series name -> transform tag (``level``, ``log_diff_100`` or ``diff``).
    """

    countries: tuple
    periods: pd.PeriodIndex
    values: Mapping[str, np.ndarray]
    present: np.ndarray
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        n, p = len(self.countries), len(self.periods)
        if len(set(self.countries)) != n:
            raise InvalidValue("duplicate country identifiers")
        if p > 1 and not (np.diff(self.periods.asi8) == 1).all():
            raise InvalidValue("periods must be contiguous and strictly increasing quarters")
        vals = {}
        for name, arr in self.values.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n, p):
                raise InvalidValue(f"series {name!r} has shape {arr.shape}, expected {(n, p)}")
            if np.isinf(arr).any():
                raise InvalidValue(f"series {name!r} contains infinite values")
            vals[name] = _frozen(arr)
        meta = dict(self.meta)
        for name in vals:
            meta.setdefault(name, "level")
            if meta[name] not in TRANSFORMS:
                raise InvalidValue(f"unknown transform tag {meta[name]!r} for {name!r}")
        present = np.array(self.present, dtype=bool)
        present.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "meta", meta)
        object.__setattr__(self, "present", present)
        object.__setattr__(self, "countries", tuple(self.countries))

    @property
    def columns(self) -> tuple:
        return tuple(self.values)

    @property
    def shape(self) -> tuple:
        return len(self.countries), len(self.periods)

    @property
    def n_rows(self) -> int:
        return int(self.present.sum())

    def row_counts(self) -> dict:
        """Number of source rows per country."""
        return {c: int(k) for c, k in zip(self.countries, self.present.sum(axis=1))}

    def grid(self, column: str) -> np.ndarray:
        try:
            return self.values[column]
        except KeyError:
            raise MissingColumn(f"column {column!r} not in panel (have {sorted(self.values)})") from None

    def period_position(self, period) -> int:
        if not isinstance(period, pd.Period):
            period = parse_period(period)
        pos = period.ordinal - self.periods[0].ordinal
        return int(pos)

    def window_mask(self, window=None) -> np.ndarray:
        """Boolean ``(P,)`` mask of periods inside ``window=(start, end)`` (inclusive)."""
        mask = np.ones(len(self.periods), dtype=bool)
        if window is None:
            return mask
        start, end = window
        pos = np.arange(len(self.periods))
        if start is not None:
            mask &= pos >= self.period_position(start)
        if end is not None:
            mask &= pos <= self.period_position(end)
        return mask

    def with_columns(self, new: Mapping[str, np.ndarray], tags: Mapping[str, str] | None = None) -> "PanelDataset":
        values = dict(self.values)
        values.update(new)
        meta = dict(self.meta)
        for k in new:
            meta[k] = (tags or {}).get(k, "level")
        return PanelDataset(self.countries, self.periods, values, self.present, meta)

    def select_countries(self, idx: Sequence[int], labels: Sequence[str] | None = None) -> "PanelDataset":
        """Panel restricted to (possibly repeated) country positions ``idx``."""
        idx = np.asarray(idx, dtype=int)
        labels = tuple(labels) if labels is not None else tuple(self.countries[i] for i in idx)
        return PanelDataset(
            labels,
            self.periods,
            {k: v[idx] for k, v in self.values.items()},
            self.present[idx],
            self.meta,
        )

    def to_frame(self, columns: Sequence[str] | None = None) -> pd.DataFrame:
        """Long frame with one row per present (country, period)."""
        columns = list(columns or self.columns)
        ci, pi = np.nonzero(self.present)
        out = pd.DataFrame(
            {
                "country": [self.countries[i] for i in ci],
                "period": [format_period(self.periods[j]) for j in pi],
            }
        )
        for c in columns:
            out[c] = self.grid(c)[ci, pi]
        return out

    def to_csv(self, path, columns: Sequence[str] | None = None) -> None:
        self.to_frame(columns).to_csv(path, index=False, float_format="%.17g")

    def zero_variance(self, columns: Iterable[str]) -> list:
        """(country, column) pairs whose non-missing values are constant.

        Used to flag policy indices that never move within a country; the
        caller decides whether to drop them.
        """
        flagged = []
        for col in columns:
            g = self.grid(col)
            for i, c in enumerate(self.countries):
                v = g[i][~np.isnan(g[i])]
                if v.size >= 2 and np.ptp(v) == 0.0:
                    flagged.append((c, col))
        return flagged


# ---------------------------------------------------------------------------
# ingestion


def load_panel(source, schema: Mapping[str, str] | Sequence[str] | None = None) -> PanelDataset:
    """Read a wide CSV (``country,period,<series...>``) of levels.

    Parameters
    ----------
    source : path-like or file object
        Wide CSV with one row per country-quarter; empty fields are missing.
    schema : sequence or mapping, optional
        Required series.  A mapping renames ``source_column -> series_name``.
        Defaults to every non-key column.

    Raises
    ------
    MissingColumn, LongFormat, UnparseablePeriod, DuplicateRow, InvalidValue
    """
    df = pd.read_csv(source, dtype=str, keep_default_na=False, na_values=[], skipinitialspace=True)
    cols = [c.strip() for c in df.columns]
    df.columns = cols
    lowered = {c.lower() for c in cols}
    if "country" not in cols or "period" not in cols:
        raise MissingColumn(f"header must start with 'country,period'; got {cols[:4]}")
    if lowered & {"variable", "series"} and "value" in lowered and (schema is None or not set(schema) <= set(cols)):
        raise LongFormat(
            "long-format input (country,period,variable,value) is not supported; pivot to one column per series"
        )
    if schema is None:
        rename = {c: c for c in cols if c not in ("country", "period")}
    elif isinstance(schema, Mapping):
        rename = dict(schema)
    else:
        rename = {c: c for c in schema}
    for src in rename:
        if src not in cols:
            raise MissingColumn(f"required column {src!r} missing from header {cols}")

    countries_raw = df["country"].str.strip().tolist()
    periods_raw = df["period"].tolist()
    parsed = []
    for line, (c, p) in enumerate(zip(countries_raw, periods_raw), start=2):
        if not c:
            raise InvalidValue(f"empty country at line {line}")
        try:
            parsed.append(parse_period(p))
        except UnparseablePeriod:
            raise UnparseablePeriod(f"cannot parse period {p!r} at line {line} (country {c!r})") from None
    seen = {}
    for line, (c, p) in enumerate(zip(countries_raw, parsed), start=2):
        key = (c, p)
        if key in seen:
            raise DuplicateRow(
                f"duplicate row ({c!r}, {format_period(p)!r}) at lines {seen[key]} and {line}"
            )
        seen[key] = line

    countries = tuple(sorted(set(countries_raw)))
    if not parsed:
        raise InvalidValue("no data rows")
    ords = np.array([p.ordinal for p in parsed])
    periods = pd.period_range(
        pd.Period(ordinal=int(ords.min()), freq="Q"), pd.Period(ordinal=int(ords.max()), freq="Q"), freq="Q"
    )
    cidx = {c: i for i, c in enumerate(countries)}
    ri = np.array([cidx[c] for c in countries_raw])
    rj = ords - ords.min()
    present = np.zeros((len(countries), len(periods)), dtype=bool)
    present[ri, rj] = True

    values = {}
    for src, name in rename.items():
        raw = df[src].str.strip()
        arr = np.full(len(raw), np.nan)
        filled = raw != ""
        try:
            arr[filled.to_numpy()] = raw[filled].astype(float).to_numpy()
        except ValueError:
            for line, v in zip(range(2, len(raw) + 2), raw):
                if v:
                    try:
                        float(v)
                    except ValueError:
                        raise InvalidValue(f"non-numeric value {v!r} in column {src!r} at line {line}") from None
        bad = filled.to_numpy() & ~np.isfinite(arr)
        if bad.any():
            line = int(np.argmax(bad)) + 2
            raise InvalidValue(f"non-finite value {raw.iloc[line - 2]!r} in column {src!r} at line {line}")
        g = np.full(present.shape, np.nan)
        g[ri, rj] = arr
        values[name] = g
    return PanelDataset(countries, periods, values, present, {k: "level" for k in values})


def _shift(g: np.ndarray, lag: int) -> np.ndarray:
    """Shift a grid along periods: positive ``lag`` gives the value at t - lag."""
    out = np.full_like(g, np.nan)
    if lag == 0:
        out[:] = g
    elif lag > 0:
        out[:, lag:] = g[:, :-lag]
    else:
        out[:, :lag] = g[:, -lag:]
    return out


def log_diff_100(series) -> np.ndarray:
    """``100 * ln(x_t / x_{t-1})``; the first observation is missing.

    Missing inputs propagate.  Raises :class:`NonPositiveLevel` on any
    non-positive level.
    """
    x = np.asarray(series, dtype=float)
    ok = ~np.isnan(x)
    if (x[ok] <= 0).any():
        pos = tuple(int(v) for v in np.argwhere(ok & (x <= 0))[0])
        raise NonPositiveLevel(f"non-positive level {x[pos]!r} at position {pos if len(pos) > 1 else pos[0]}")
    out = np.full(x.shape, np.nan)
    with np.errstate(invalid="ignore"):
        out[..., 1:] = 100.0 * (np.log(x[..., 1:]) - np.log(x[..., :-1]))
    return out


def transform_panel(panel: PanelDataset, transforms: Mapping[str, str | tuple]) -> PanelDataset:
    """Apply per-country transforms.

    ``transforms`` maps an output name to a tag, or to ``(source, tag)`` when
    the output should be a new column derived from ``source``.
    """
    new, tags = {}, {}
    for name, how in transforms.items():
        source, tag = (name, how) if isinstance(how, str) else tuple(how)
        if tag not in TRANSFORMS:
            raise InvalidValue(f"unknown transform {tag!r} for {name!r}")
        if panel.meta.get(source, "level") != "level":
            raise InvalidValue(f"column {source!r} is already transformed ({panel.meta[source]})")
        g = panel.grid(source)
        if tag == "level":
            out = g.copy()
        elif tag == "diff":
            out = g - _shift(g, 1)
        else:
            try:
                out = log_diff_100(g)
            except NonPositiveLevel:
                i, j = np.argwhere(g <= 0)[0]
                raise NonPositiveLevel(
                    f"non-positive level {g[i, j]!r} in {source!r} at ({panel.countries[i]!r}, "
                    f"{format_period(panel.periods[j])!r})"
                ) from None
        new[name], tags[name] = out, tag
    return panel.with_columns(new, tags)


# ---------------------------------------------------------------------------
# interest-rate regimes


@dataclass(frozen=True, eq=False)
class RegimeVariables:
    """Interest-rate environment per (country, quarter), each an ``(N, P)`` grid.

    ``d_i_q`` is the quarterly change, ``d_i_a`` the four-quarter change, and
    ``ind_q`` / ``ind_a`` the strict-negativity indicators (missing where the
    change is missing).
    """

    d_i_q: np.ndarray
    d_i_a: np.ndarray
    ind_q: np.ndarray
    ind_a: np.ndarray

    def as_dict(self) -> dict:
        return {"d_i_q": self.d_i_q, "d_i_a": self.d_i_a, "ind_q": self.ind_q, "ind_a": self.ind_a}

    def select_countries(self, idx) -> "RegimeVariables":
        idx = np.asarray(idx, dtype=int)
        return RegimeVariables(*(v[idx] for v in self.as_dict().values()))


def _indicator(d: np.ndarray) -> np.ndarray:
    return np.where(np.isnan(d), np.nan, (d < 0).astype(float))


def build_regimes(panel: PanelDataset, rate_column: str = "rate") -> RegimeVariables:
    """Quarterly/annual interest-rate changes (p.p.) and their sign indicators."""
    if rate_column not in panel.values:
        raise MissingRateColumn(f"rate column {rate_column!r} not in panel")
    if panel.meta.get(rate_column, "level") != "level":
        raise MissingRateColumn(f"rate column {rate_column!r} must hold levels, found {panel.meta[rate_column]}")
    r = panel.grid(rate_column)
    d_q = r - _shift(r, 1)
    d_a = r - _shift(r, 4)
    return RegimeVariables(_frozen(d_q), _frozen(d_a), _frozen(_indicator(d_q)), _frozen(_indicator(d_a)))


# ---------------------------------------------------------------------------
# Hodrick-Prescott filter


def _second_difference_gram(n: int, lamb: float) -> np.ndarray:
    """Upper banded storage of ``I + lamb * D'D`` for ``solveh_banded``."""
    c = np.array([1.0, -2.0, 1.0])
    d0, d1, d2 = np.zeros(n), np.zeros(n - 1), np.zeros(n - 2)
    for a in range(3):
        d0[a : a + n - 2] += c[a] * c[a]
    for a in range(2):
        d1[a : a + n - 2] += c[a] * c[a + 1]
    d2[:] = c[0] * c[2]
    ab = np.zeros((3, n))
    ab[2] = 1.0 + lamb * d0
    ab[1, 1:] = lamb * d1
    ab[0, 2:] = lamb * d2
    return ab


def hp_filter(series, lamb: float = HP_LAMBDA_QUARTERLY) -> tuple:
    """Hodrick-Prescott trend and cycle of one series.

    Solves ``(I + lamb D'D) trend = y`` as a symmetric pentadiagonal system
    with the standard (untapered) end-point penalty.  Leading and trailing
    missing values are passed through; interior gaps are an error.

    Returns
    -------
    trend, cycle : ndarray
        Same length as ``series``; ``cycle = series - trend``.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("hp_filter expects a 1-d series")
    if not lamb > 0:
        raise ValueError(f"lambda must be positive, got {lamb}")
    ok = np.flatnonzero(~np.isnan(y))
    if ok.size == 0:
        raise SeriesTooShort("series has no observations")
    lo, hi = ok[0], ok[-1] + 1
    if np.isnan(y[lo:hi]).any():
        raise InteriorMissing(f"interior missing value at position {lo + int(np.argmax(np.isnan(y[lo:hi])))}")
    n = hi - lo
    if n < 4:
        raise SeriesTooShort(f"need at least 4 observations, got {n}")
    trend = np.full(y.shape, np.nan)
    trend[lo:hi] = solveh_banded(_second_difference_gram(n, lamb), y[lo:hi], check_finite=False)
    return trend, y - trend


def hp_filter_panel(panel: PanelDataset, column: str, lamb: float = HP_LAMBDA_QUARTERLY) -> tuple:
    """Per-country HP filter of ``column``; returns ``(trend, cycle)`` grids."""
    g = panel.grid(column)
    trend, cycle = np.full(g.shape, np.nan), np.full(g.shape, np.nan)
    for i, c in enumerate(panel.countries):
        try:
            trend[i], cycle[i] = hp_filter(g[i], lamb)
        except (InteriorMissing, SeriesTooShort) as exc:
            raise type(exc)(f"{column!r}, country {c!r}: {exc}") from None
    return trend, cycle


def output_gap(panel: PanelDataset, level_column: str, lamb: float = HP_LAMBDA_QUARTERLY) -> np.ndarray:
    """HP cycle of ``100 * ln(level)`` per country, i.e. the gap in percent."""
    g = panel.grid(level_column)
    if (g[~np.isnan(g)] <= 0).any():
        raise NonPositiveLevel(f"non-positive level in {level_column!r}")
    logged = panel.with_columns({"__log": 100.0 * np.log(g)})
    return hp_filter_panel(logged, "__log", lamb)[1]


# ---------------------------------------------------------------------------
# anticipation controls


def load_forecasts(source) -> pd.DataFrame:
    """Read forecast records ``country,edition(YYYY-MM),target_year,value``."""
    df = pd.read_csv(source, dtype={"country": str, "edition": str})
    missing = {"country", "edition", "target_year", "value"} - set(df.columns)
    if missing:
        raise MissingColumn(f"forecast file lacks columns {sorted(missing)}")
    return df


def required_edition(period: pd.Period) -> tuple:
    """(edition, target year) whose forecast applies to ``period``.

    Q1/Q2 of year t use the December edition of t-1 for target t; Q3/Q4 use the
    June edition of t for target t+1.
    """
    y = period.year
    if period.quarter <= 2:
        return f"{y - 1}-12", y
    return f"{y}-06", y + 1


def merge_anticipation(
    panel: PanelDataset, forecasts, column: str = "gdp_forecast", window=None
) -> PanelDataset:
    """Attach the GDP-growth forecast available at each quarter as ``column``.

    Every present row inside ``window`` must be covered; otherwise
    :class:`MissingForecast` names the first uncovered cell and the edition it
    needs.
    """
    if not isinstance(forecasts, pd.DataFrame):
        forecasts = pd.DataFrame(list(forecasts), columns=["country", "edition", "target_year", "value"])
    lookup = {
        (str(c), str(e), int(t)): float(v)
        for c, e, t, v in forecasts[["country", "edition", "target_year", "value"]].itertuples(index=False)
    }
    out = np.full(panel.shape, np.nan)
    wmask = panel.window_mask(window)
    editions = [required_edition(p) for p in panel.periods]
    for i, c in enumerate(panel.countries):
        for j, (ed, target) in enumerate(editions):
            if not (panel.present[i, j] and wmask[j]):
                continue
            key = (c, ed, target)
            if key not in lookup:
                raise MissingForecast(
                    f"no forecast for ({c!r}, {format_period(panel.periods[j])!r}): "
                    f"need edition {ed} for target year {target}"
                )
            out[i, j] = lookup[key]
    return panel.with_columns({column: out}, {column: "level"})


# ---------------------------------------------------------------------------
# summary statistics


def summary_stats(panel: PanelDataset, columns: Sequence[str] | None = None) -> pd.DataFrame:
    """Per-country mean and (n-1) standard deviation of each series.

    Columns are a ``(series, stat)`` MultiIndex; missing cells are skipped and a
    series with fewer than two observations yields a missing sd.
    """
    columns = list(columns or panel.columns)
    data = {}
    for col in columns:
        g = panel.grid(col)
        means, sds = [], []
        for row in g:
            v = row[~np.isnan(row)]
            means.append(v.mean() if v.size else np.nan)
            sds.append(v.std(ddof=1) if v.size > 1 else np.nan)
        data[(col, "mean")] = means
        data[(col, "sd")] = sds
    out = pd.DataFrame(data, index=pd.Index(panel.countries, name="country"))
    out.columns = pd.MultiIndex.from_tuples(out.columns, names=["series", "stat"])
    return out

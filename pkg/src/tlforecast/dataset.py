"""Daily multi-station observations: loading, gap filling, scaling, windowing.

Missing values are represented by NaN throughout. A ``TimeSeriesDataset``
always has one row per calendar day; days absent from a source file are
inserted as all-missing rows.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numkernel import SeededRng

__all__ = [
    "MISSING_TOKENS",
    "LoadError",
    "MalformedHeaderError",
    "DuplicateTimestampError",
    "ScalerFitError",
    "SplitError",
    "SynthConfigError",
    "TimeSeriesDataset",
    "ScalerParams",
    "WindowedSample",
    "SplitSpec",
    "SynthConfig",
    "load_csv",
    "save_csv",
    "merge",
    "impute",
    "fit_scaler",
    "scale",
    "inverse_scale",
    "make_windows",
    "scale_samples",
    "stack_samples",
    "chronological_split",
    "synthesize",
]

MISSING_TOKENS = frozenset({"", "na", "nan"})


class LoadError(ValueError):
    """A data file could not be turned into a dataset."""


class MalformedHeaderError(LoadError):
    pass


class DuplicateTimestampError(LoadError):
    pass


class ScalerFitError(ValueError):
    pass


class SplitError(ValueError):
    pass


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSeriesDataset:
    dates: tuple[dt.date, ...]
    values: np.ndarray  # (N, F), NaN marks a missing observation
    feature_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        values = np.array(self.values, dtype=np.float64).reshape(len(self.dates), -1)
        if values.shape[1] != len(self.feature_names) and len(self.dates):
            raise ValueError(
                f"{values.shape[1]} value columns for {len(self.feature_names)} feature names"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")
        one = dt.timedelta(days=1)
        for a, b in zip(self.dates[:-1], self.dates[1:]):
            if b - a != one:
                raise ValueError(f"dates must be consecutive days ({a} -> {b})")
        values.setflags(write=False)
        object.__setattr__(self, "values", values.reshape(len(self.dates), len(self.feature_names)))

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_index(name)]

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None

    def select(self, names: Sequence[str]) -> "TimeSeriesDataset":
        idx = [self.feature_index(n) for n in names]
        return TimeSeriesDataset(self.dates, self.values[:, idx], tuple(names))

    def until(self, last: dt.date) -> "TimeSeriesDataset":
        """Rows dated on or before ``last``."""
        k = sum(1 for d in self.dates if d <= last)
        return TimeSeriesDataset(self.dates[:k], self.values[:k], self.feature_names)

    def tail(self, n: int) -> "TimeSeriesDataset":
        n = min(n, len(self))
        return TimeSeriesDataset(self.dates[len(self) - n :], self.values[len(self) - n :], self.feature_names)


def _parse_cell(cell: str) -> float:
    s = cell.strip()
    if s.lower() in MISSING_TOKENS:
        return math.nan
    try:
        v = float(s)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_csv(path, schema: Sequence[str] | None = None) -> TimeSeriesDataset:
    """Read a ``date,<feature>,...`` CSV file.

    ``schema`` optionally lists the feature columns to keep, in order; every
    name must appear in the header. Rows are sorted by date and missing days
    are inserted as all-NaN rows. Unparseable cells become NaN.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedHeaderError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].lower() != "date":
            raise MalformedHeaderError(f"{path}: header must start with 'date' and name >= 1 feature")
        names = header[1:]
        if any(not n for n in names) or len(set(names)) != len(names):
            raise MalformedHeaderError(f"{path}: feature names must be non-empty and unique")
        rows: dict[dt.date, list[float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise LoadError(f"{path}:{lineno}: bad date {row[0]!r}") from None
            if day in rows:
                raise DuplicateTimestampError(f"{path}:{lineno}: duplicate date {day}")
            cells = row[1:] + [""] * (len(names) - len(row) + 1)
            if len(cells) > len(names):
                raise LoadError(f"{path}:{lineno}: {len(row)} cells for {len(header)} columns")
            rows[day] = [_parse_cell(c) for c in cells]
    if not rows:
        raise LoadError(f"{path}: no data rows")
    first, last = min(rows), max(rows)
    n = (last - first).days + 1
    dates = [first + dt.timedelta(days=k) for k in range(n)]
    values = np.full((n, len(names)), np.nan)
    for day, vals in rows.items():
        values[(day - first).days] = vals
    ds = TimeSeriesDataset(dates, values, names)
    if schema is not None:
        missing = [s for s in schema if s not in names]
        if missing:
            raise MalformedHeaderError(f"{path}: columns {missing} not in header")
        ds = ds.select(schema)
    return ds


def save_csv(ds: TimeSeriesDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *ds.feature_names])
        for day, row in zip(ds.dates, ds.values):
            w.writerow([day.isoformat(), *("NA" if math.isnan(v) else repr(float(v)) for v in row)])


def merge(datasets: Sequence[TimeSeriesDataset]) -> TimeSeriesDataset:
    """Column-wise union over the full covering date range."""
    if not datasets:
        raise ValueError("nothing to merge")
    first = min(d.dates[0] for d in datasets)
    last = max(d.dates[-1] for d in datasets)
    n = (last - first).days + 1
    names: list[str] = []
    blocks = []
    for d in datasets:
        block = np.full((n, d.n_features), np.nan)
        off = (d.dates[0] - first).days
        block[off : off + len(d)] = d.values
        blocks.append(block)
        names.extend(d.feature_names)
    dates = [first + dt.timedelta(days=k) for k in range(n)]
    return TimeSeriesDataset(dates, np.hstack(blocks), names)


def impute(ds: TimeSeriesDataset, max_gap: int = 3) -> TimeSeriesDataset:
    """Forward-fill runs of at most ``max_gap`` missing values.

    Longer runs, and missing values before the first observation, are left
    missing.
    """
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    out = ds.values.copy()
    N = len(ds)
    for j in range(ds.n_features):
        col = out[:, j]
        t = 0
        while t < N:
            if not math.isnan(col[t]):
                t += 1
                continue
            start = t
            while t < N and math.isnan(col[t]):
                t += 1
            if start > 0 and t - start <= max_gap:
                col[start:t] = col[start - 1]
    return TimeSeriesDataset(ds.dates, out, ds.feature_names)


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature min-max ranges mapped onto ``[r_min, r_max]``."""

    feature_names: tuple[str, ...]
    x_min: tuple[float, ...]
    x_max: tuple[float, ...]
    r_min: float = 0.0
    r_max: float = 1.0

    def __post_init__(self):
        for name in ("feature_names", "x_min", "x_max"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (len(self.feature_names) == len(self.x_min) == len(self.x_max)):
            raise ValueError("feature_names, x_min and x_max must have equal length")
        if not self.r_max > self.r_min:
            raise ValueError("r_max must exceed r_min")
        for n, lo, hi in zip(self.feature_names, self.x_min, self.x_max):
            if not hi > lo:
                raise ValueError(f"degenerate range for feature {n!r}")

    def index(self, feature: str) -> int:
        try:
            return self.feature_names.index(feature)
        except ValueError:
            raise KeyError(f"feature {feature!r} not in scaler") from None

    def transform(self, values: np.ndarray, features: Sequence[str] | None = None) -> np.ndarray:
        """Scale the columns of ``values`` (NaN passes through)."""
        idx = [self.index(f) for f in (features or self.feature_names)]
        lo = np.array([self.x_min[k] for k in idx])
        hi = np.array([self.x_max[k] for k in idx])
        std = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
        return std * (self.r_max - self.r_min) + self.r_min

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "x_min": list(self.x_min),
            "x_max": list(self.x_max),
            "r_min": self.r_min,
            "r_max": self.r_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(d["feature_names"], d["x_min"], d["x_max"], d.get("r_min", 0.0), d.get("r_max", 1.0))


def fit_scaler(train_slice: TimeSeriesDataset, r_min: float = 0.0, r_max: float = 1.0) -> ScalerParams:
    """Min and max of each feature over the observed (non-NaN) training values."""
    if len(train_slice) == 0:
        raise ScalerFitError("cannot fit a scaler on an empty dataset")
    lo, hi = [], []
    for j, name in enumerate(train_slice.feature_names):
        col = train_slice.values[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0 or col.min() == col.max():
            raise ScalerFitError(f"feature {name!r} has fewer than 2 distinct observed values")
        lo.append(float(col.min()))
        hi.append(float(col.max()))
    return ScalerParams(train_slice.feature_names, lo, hi, r_min, r_max)


def scale(x: float, feature: str, params: ScalerParams) -> float:
    k = params.index(feature)
    lo, hi = params.x_min[k], params.x_max[k]
    x_std = (x - lo) / (hi - lo)
    return x_std * (params.r_max - params.r_min) + params.r_min


def inverse_scale(y: float, feature: str, params: ScalerParams) -> float:
    k = params.index(feature)
    lo, hi = params.x_min[k], params.x_max[k]
    x_std = (y - params.r_min) / (params.r_max - params.r_min)
    return x_std * (hi - lo) + lo


@dataclass(frozen=True)
class WindowedSample:
    inputs: np.ndarray  # (B, F): the B days before target_date
    target: float
    target_date: dt.date


def make_windows(ds: TimeSeriesDataset, B: int, target_feature: str) -> list[WindowedSample]:
    """All complete ``(x_{t-B} .. x_{t-1}) -> y_t`` samples, in date order.

    A sample is dropped if any of its inputs or its target is missing.
    """
    if B < 1:
        raise ValueError("window length B must be >= 1")
    j = ds.feature_index(target_feature)
    vals = ds.values
    N = len(ds)
    if N <= B:
        return []
    row_ok = ~np.isnan(vals).any(axis=1)
    # bad[t] = number of incomplete rows among t-B .. t-1
    csum = np.concatenate([[0], np.cumsum(~row_ok)])
    samples = []
    for t in range(B, N):
        if csum[t] - csum[t - B] or math.isnan(vals[t, j]):
            continue
        inputs = vals[t - B : t].copy()
        inputs.setflags(write=False)
        samples.append(WindowedSample(inputs, float(vals[t, j]), ds.dates[t]))
    return samples


def scale_samples(
    samples: Sequence[WindowedSample],
    params: ScalerParams,
    features: Sequence[str],
    target_feature: str,
) -> list[WindowedSample]:
    """Apply ``params`` to window inputs (columns named by ``features``) and targets."""
    out = []
    for s in samples:
        x = params.transform(s.inputs, features)
        x.setflags(write=False)
        out.append(WindowedSample(x, scale(s.target, target_feature, params), s.target_date))
    return out


def stack_samples(samples: Sequence[WindowedSample]) -> tuple[np.ndarray, np.ndarray]:
    """``(n, B, F)`` inputs and ``(n,)`` targets."""
    if not samples:
        raise ValueError("no samples to stack")
    X = np.stack([s.inputs for s in samples])
    y = np.array([s.target for s in samples], dtype=np.float64)
    return X, y


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.25
    test_frac: float = 0.05

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fr):
            raise SplitError("split fractions must be positive")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise SplitError(f"split fractions sum to {sum(fr)}, not 1")


def _floor(x: float) -> int:
    # guard against products like 0.7 * 4650 landing a hair below an integer
    return math.floor(x + 1e-9)


def chronological_split(samples: Sequence, spec: SplitSpec = SplitSpec()):
    """First ``floor(n * train_frac)`` samples, next ``floor(n * val_frac)``, then the rest."""
    n = len(samples)
    n_train = _floor(n * spec.train_frac)
    n_val = _floor(n * spec.val_frac)
    train = list(samples[:n_train])
    val = list(samples[n_train : n_train + n_val])
    test = list(samples[n_train + n_val :])
    if not (train and val and test):
        raise SplitError(f"split of {n} samples leaves an empty partition ({len(train)}/{len(val)}/{len(test)})")
    return train, val, test


DEFAULT_POLLUTANTS = ("PM10", "PM2.5", "NO2", "NO", "CO")


@dataclass(frozen=True)
class SynthConfig:
    """Settings for ``synthesize``; mirrors the synthetic-data JSON file.

    ``stations`` is either a count or a list of station names.
    """

    stations: int | tuple[str, ...] = 2
    features_per_station: int = 3
    days: int = 2000
    coupling: float = 0.8
    noise_sd: float = 0.1
    seasonal_amplitude: float = 1.0
    seed: int = 0
    ar_coef: float = 0.7
    start: dt.date = dt.date(2001, 10, 1)

    def __post_init__(self):
        if isinstance(self.stations, (list, tuple)):
            object.__setattr__(self, "stations", tuple(str(s) for s in self.stations))
            if not self.stations or len(set(self.stations)) != len(self.stations):
                raise SynthConfigError("station names must be non-empty and unique")
        elif int(self.stations) < 1:
            raise SynthConfigError("need at least one station")
        if self.features_per_station < 1:
            raise SynthConfigError("features_per_station must be >= 1")
        if self.days < 1:
            raise SynthConfigError("days must be >= 1")
        if not 0.0 <= self.coupling <= 1.0:
            raise SynthConfigError("coupling must lie in [0, 1]")
        if self.noise_sd < 0 or self.seasonal_amplitude < 0:
            raise SynthConfigError("noise_sd and seasonal_amplitude must be >= 0")
        if not -1.0 < self.ar_coef < 1.0:
            raise SynthConfigError("ar_coef must lie in (-1, 1)")

    @property
    def station_names(self) -> tuple[str, ...]:
        if isinstance(self.stations, tuple):
            return self.stations
        return tuple(f"station{k}" for k in range(int(self.stations)))

    @property
    def pollutant_names(self) -> tuple[str, ...]:
        n = self.features_per_station
        names = list(DEFAULT_POLLUTANTS[:n])
        names += [f"P{k}" for k in range(len(names), n)]
        return tuple(names)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {
            "stations", "features_per_station", "days", "coupling", "noise_sd",
            "seasonal_amplitude", "seed", "ar_coef", "start",
        }
        unknown = set(d) - known
        if unknown:
            raise SynthConfigError(f"unknown synthetic-data keys: {sorted(unknown)}")
        kw = dict(d)
        if "start" in kw:
            kw["start"] = dt.date.fromisoformat(kw["start"])
        if isinstance(kw.get("stations"), list):
            kw["stations"] = tuple(kw["stations"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _ar1(rng: SeededRng, n: int, phi: float) -> np.ndarray:
    """Stationary unit-variance AR(1) path."""
    z = rng.normal_array(n)
    out = np.empty(n)
    out[0] = z[0]
    s = math.sqrt(1.0 - phi * phi)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + s * z[t]
    return out


def synthesize(config: SynthConfig, rng: SeededRng | None = None) -> dict[str, TimeSeriesDataset]:
    """Correlated daily pollutant series for several stations.

    For station ``s`` and pollutant ``j``::

        v = k * shared_j + (1 - k) * own_sj + A * sin(2 pi t / 365.25 + phase_j) + noise
        x = level_j + spread_j * v

    where ``shared_j`` and ``own_sj`` are unit-variance AR(1) paths and ``k``
    is the coupling. Levels and spreads depend only on the pollutant, so
    with ``k = 1`` and no noise every station carries the same series.

    Draw order: per-pollutant constants, shared paths, then for each station
    its own paths and noise. ``rng`` defaults to ``SeededRng(config.seed)``.
    """
    if rng is None:
        rng = SeededRng(config.seed)
    n = config.days
    k = config.coupling
    pols = config.pollutant_names
    phases = [2 * math.pi * rng.uniform() for _ in pols]
    levels = [20.0 + 60.0 * rng.uniform() for _ in pols]
    spreads = [lv / 8.0 for lv in levels]
    shared = [_ar1(rng, n, config.ar_coef) for _ in pols]
    t = np.arange(n, dtype=np.float64)
    seasonal = [config.seasonal_amplitude * np.sin(2 * math.pi * t / 365.25 + ph) for ph in phases]
    dates = [config.start + dt.timedelta(days=d) for d in range(n)]
    out = {}
    for station in config.station_names:
        cols = []
        for j in range(len(pols)):
            own = _ar1(rng, n, config.ar_coef)
            noise = config.noise_sd * rng.normal_array(n)
            v = k * shared[j] + (1.0 - k) * own + seasonal[j] + noise
            cols.append(levels[j] + spreads[j] * v)
        names = [f"{station}.{p}" for p in pols]
        out[station] = TimeSeriesDataset(dates, np.column_stack(cols), names)
    return out

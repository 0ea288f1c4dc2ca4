"""Random-initialisation vs pre-trained comparison runs.

A scenario trains, for every seed, a randomly initialised target network
and/or networks initialised from a source-task checkpoint, then writes a
comparison table with the Best MSE / Best epoch / Initial MSE columns for
training and validation data, plus loss curves, test-period predictions
and checkpoints for every run.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (
    ScalerParams,
    SplitSpec,
    SynthConfig,
    TimeSeriesDataset,
    WindowedSample,
    chronological_split,
    fit_scaler,
    impute,
    inverse_scale,
    load_csv,
    make_windows,
    merge,
    scale_samples,
    stack_samples,
    synthesize,
)
from .lstm import NetworkArchitecture, init_network, predict
from .numkernel import SeededRng
from .training import TrainConfig, TrainingDivergedError, TrainingReport, format_mse, train
from .transfer import NetworkCheckpoint, TransferSpec, adapt_for_target, load_checkpoint, save_checkpoint

__all__ = [
    "MODES",
    "DEFAULT_OUT_DIR",
    "ConfigError",
    "Task",
    "ScenarioConfig",
    "ComparisonRow",
    "RunRecord",
    "ScenarioResult",
    "TaskData",
    "prepare_task",
    "run_scenario",
    "emit_reports",
    "highlight_best",
    "resolve_out_dir",
]

log = logging.getLogger(__name__)

MODES = ("random_init", "pretrained_trainable", "pretrained_untrainable")
DEFAULT_OUT_DIR = "tlforecast_out"

# independent RNG streams derived from each run seed
_STREAM_SOURCE_INIT = 1
_STREAM_TARGET_INIT = 2
_STREAM_REBUILT_LAYER = 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    """Predict ``pollutant`` at ``station``; the data column is ``station.pollutant``."""

    station: str
    pollutant: str

    @property
    def column(self) -> str:
        return f"{self.station}.{self.pollutant}"

    @property
    def label(self) -> str:
        return f"{self.station} {self.pollutant}"

    @classmethod
    def parse(cls, d) -> "Task":
        if isinstance(d, str):
            station, sep, pollutant = d.partition(".")
            if not sep:
                raise ConfigError(f"task {d!r} must look like 'station.pollutant'")
            return cls(station, pollutant)
        try:
            return cls(str(d["station"]), str(d["pollutant"]))
        except (KeyError, TypeError):
            raise ConfigError(f"task must name a station and a pollutant, got {d!r}") from None


@dataclass(frozen=True)
class ScenarioConfig:
    target: Task
    synthetic: SynthConfig | None = None
    csv_paths: tuple[str, ...] = ()
    source: Task | None = None
    source_checkpoint: str | None = None
    features: tuple[str, ...] | None = None
    source_features: tuple[str, ...] | None = None
    window: int = 6
    split: SplitSpec = SplitSpec()
    max_gap: int = 3
    hidden_dims: tuple[int, ...] = (64, 32)
    train: TrainConfig = TrainConfig()
    modes: tuple[str, ...] = MODES
    seeds: tuple[int, ...] = tuple(range(10))
    out_dir: str | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not self.modes:
            raise ConfigError("at least one mode is required")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ConfigError(f"unknown modes {bad}; choose from {MODES}")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigError("modes must be unique")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if (self.synthetic is None) == (not self.csv_paths):
            raise ConfigError("give exactly one data source: synthetic config or CSV paths")
        if any(m != "random_init" for m in self.modes) and self.source is None and self.source_checkpoint is None:
            raise ConfigError("pre-trained modes need a source task or a source checkpoint")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | os.PathLike = ".") -> "ScenarioConfig":
        d = dict(d)
        data = d.pop("data", None)
        if not isinstance(data, dict):
            raise ConfigError("config needs a 'data' object with 'synthetic' or 'csv'")
        kw: dict = {}
        if "synthetic" in data:
            kw["synthetic"] = SynthConfig.from_dict(data["synthetic"])
        if "csv" in data:
            paths = data["csv"]
            paths = [paths] if isinstance(paths, str) else list(paths)
            kw["csv_paths"] = tuple(str(Path(base_dir) / p) for p in paths)
        if "target" not in d:
            raise ConfigError("config needs a 'target' task")
        kw["target"] = Task.parse(d.pop("target"))
        src = d.pop("source", None)
        if src is not None:
            kw["source"] = Task.parse(src)
        ck = d.pop("source_checkpoint", None)
        if ck is not None:
            kw["source_checkpoint"] = str(Path(base_dir) / ck)
        for key in ("features", "source_features"):
            v = d.pop(key, None)
            if v is not None:
                kw[key] = tuple(v)
        if "split" in d:
            s = d.pop("split")
            kw["split"] = SplitSpec(*s) if isinstance(s, (list, tuple)) else SplitSpec(**s)
        if "train" in d:
            kw["train"] = TrainConfig.from_dict(d.pop("train"))
        if "architecture" in d:
            kw["hidden_dims"] = tuple(int(h) for h in d.pop("architecture"))
        for key in ("modes", "seeds"):
            if key in d:
                kw[key] = tuple(d.pop(key))
        for key in ("window", "max_gap", "out_dir"):
            if key in d:
                kw[key] = d.pop(key)
        if d:
            raise ConfigError(f"unknown config keys: {sorted(d)}")
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        return cls.from_dict(d, base_dir=Path(path).parent)


def resolve_out_dir(cfg: ScenarioConfig, override: str | None = None) -> Path:
    """Explicit override, then the config's ``out_dir``, then ``$TLFORECAST_OUT``, then the default."""
    return Path(override or cfg.out_dir or os.environ.get("TLFORECAST_OUT") or DEFAULT_OUT_DIR)


@dataclass
class ComparisonRow:
    source_domain: str
    target_domain: str
    mode: str
    seed: str  # run seed, or "mean" for the across-seed average
    train_best_mse: float
    train_best_epoch: float
    train_initial_mse: float
    val_best_mse: float
    val_best_epoch: float
    val_initial_mse: float
    best: bool = False

    @classmethod
    def from_report(cls, source: str, target: str, mode: str, seed, rep: TrainingReport) -> "ComparisonRow":
        return cls(
            source, target, mode, str(seed),
            rep.best_train_mse, rep.best_train_epoch, rep.initial_train_mse,
            rep.best_val_mse, rep.best_val_epoch, rep.initial_val_mse,
        )

    def csv_cells(self) -> list[str]:
        def epoch(e):
            return str(int(e)) if float(e).is_integer() else f"{e:.1f}"

        return [
            self.source_domain, self.target_domain, self.mode, self.seed,
            format_mse(self.train_best_mse), epoch(self.train_best_epoch), format_mse(self.train_initial_mse),
            format_mse(self.val_best_mse), epoch(self.val_best_epoch), format_mse(self.val_initial_mse),
            "*" if self.best else "",
        ]


CSV_HEADER = [
    "source_domain", "target_domain", "mode", "seed",
    "train_best_mse", "train_best_epoch", "train_initial_mse",
    "val_best_mse", "val_best_epoch", "val_initial_mse", "best",
]


@dataclass
class TaskData:
    task: Task
    features: tuple[str, ...]
    scaler: ScalerParams
    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]
    test_dates: list
    test_actual: np.ndarray  # physical units


def prepare_task(
    ds: TimeSeriesDataset, task: Task, features: Sequence[str], window: int, split: SplitSpec
) -> TaskData:
    """Window, split, then fit the scaler on rows up to the last training target."""
    features = tuple(features)
    if task.column not in features:
        raise ConfigError(f"target column {task.column!r} must be one of the input features")
    sub = ds.select(features)
    raw = make_windows(sub, window, task.column)
    if not raw:
        raise ConfigError(f"no complete windows for {task.column}")
    tr, va, te = chronological_split(raw, split)
    scaler = fit_scaler(sub.until(tr[-1].target_date))

    def prep(samples: list[WindowedSample]):
        return stack_samples(scale_samples(samples, scaler, features, task.column))

    return TaskData(
        task, features, scaler, prep(tr), prep(va), prep(te),
        [s.target_date for s in te], np.array([s.target for s in te]),
    )


@dataclass
class RunRecord:
    mode: str
    seed: int
    report: TrainingReport
    data: TaskData
    checkpoint: NetworkCheckpoint


@dataclass
class ScenarioResult:
    rows: list[ComparisonRow]  # one per mode, averaged over successful seeds
    seed_rows: list[ComparisonRow]  # one per (mode, seed) that completed
    runs: list[RunRecord]
    source_runs: dict[int, RunRecord] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _load_dataset(cfg: ScenarioConfig) -> TimeSeriesDataset:
    if cfg.synthetic is not None:
        ds = merge(list(synthesize(cfg.synthetic).values()))
    else:
        ds = merge([load_csv(p) for p in cfg.csv_paths])
    return impute(ds, cfg.max_gap)


def _mean_row(rows: list[ComparisonRow]) -> ComparisonRow:
    def avg(attr):
        return float(np.mean([getattr(r, attr) for r in rows]))

    r0 = rows[0]
    return ComparisonRow(
        r0.source_domain, r0.target_domain, r0.mode, "mean",
        avg("train_best_mse"), avg("train_best_epoch"), avg("train_initial_mse"),
        avg("val_best_mse"), avg("val_best_epoch"), avg("val_initial_mse"),
    )


def _source_label(cfg: ScenarioConfig, ckpt: NetworkCheckpoint | None, mode: str) -> str:
    if mode == "random_init":
        return "N/A"
    if cfg.source is not None:
        base = cfg.source.label
    else:
        task = (ckpt.metadata if ckpt else {}).get("task") or {}
        base = f"{task.get('station', '?')} {task.get('pollutant', '?')}"
    kind = "trainable" if mode == "pretrained_trainable" else "untrainable"
    return f"{base}, pre-trained LSTM is {kind}"


def _checkpoint(rep: TrainingReport, data: TaskData, seed: int, mode: str) -> NetworkCheckpoint:
    meta = {
        "task": {"station": data.task.station, "pollutant": data.task.pollutant},
        "mode": mode,
        "seed": seed,
        "best_val_mse": rep.best_val_mse,
        "created": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return NetworkCheckpoint.from_network(rep.best_network, data.features, data.scaler, meta)


def run_scenario(cfg: ScenarioConfig, out_dir: str | os.PathLike | None = None) -> ScenarioResult:
    """Run every (mode, seed) pair and write all artifacts to ``out_dir``.

    A failure in one run (divergence, bad data) is recorded in
    ``result.failures`` and does not stop the others.
    """
    ds = _load_dataset(cfg)
    all_features = ds.feature_names
    target_data = prepare_task(ds, cfg.target, cfg.features or all_features, cfg.window, cfg.split)
    source_data = None
    if cfg.source is not None and cfg.source_checkpoint is None:
        source_data = prepare_task(ds, cfg.source, cfg.source_features or all_features, cfg.window, cfg.split)
    fixed_ckpt = load_checkpoint(cfg.source_checkpoint) if cfg.source_checkpoint else None

    seed_rows: list[ComparisonRow] = []
    runs: list[RunRecord] = []
    source_runs: dict[int, RunRecord] = {}
    failures: list[dict] = []
    wants_source = any(m != "random_init" for m in cfg.modes)

    for seed in cfg.seeds:
        root = SeededRng(seed)
        ckpt = fixed_ckpt
        source_error = None
        if wants_source and ckpt is None:
            try:
                arch = NetworkArchitecture(len(source_data.features), cfg.hidden_dims)
                net = init_network(arch, root.spawn(_STREAM_SOURCE_INIT))
                rep = train(net, source_data.train, source_data.val, cfg.train)
                ckpt = _checkpoint(rep, source_data, seed, "source")
                source_runs[seed] = RunRecord("source", seed, rep, source_data, ckpt)
            except (TrainingDivergedError, ValueError) as exc:
                source_error = f"source training failed: {exc}"
                failures.append({"mode": "source", "seed": seed, "error": str(exc)})
                log.warning("seed %s: %s", seed, source_error)

        for mode in cfg.modes:
            try:
                if mode == "random_init":
                    arch = NetworkArchitecture(len(target_data.features), cfg.hidden_dims)
                    net = init_network(arch, root.spawn(_STREAM_TARGET_INIT))
                else:
                    if ckpt is None:
                        raise RuntimeError(source_error or "no source checkpoint")
                    spec = TransferSpec(mode.removeprefix("pretrained_"), target_data.features, seed=seed)
                    net = adapt_for_target(ckpt, spec, root.spawn(_STREAM_REBUILT_LAYER))
                rep = train(net, target_data.train, target_data.val, cfg.train)
            except (TrainingDivergedError, RuntimeError, ValueError) as exc:
                failures.append({"mode": mode, "seed": seed, "error": str(exc)})
                log.warning("seed %s mode %s failed: %s", seed, mode, exc)
                continue
            row = ComparisonRow.from_report(_source_label(cfg, ckpt, mode), cfg.target.label, mode, seed, rep)
            seed_rows.append(row)
            runs.append(RunRecord(mode, seed, rep, target_data, _checkpoint(rep, target_data, seed, mode)))

    rows = []
    for mode in cfg.modes:
        done = [r for r in seed_rows if r.mode == mode]
        if done:
            rows.append(_mean_row(done))
    result = ScenarioResult(highlight_best(rows), seed_rows, runs, source_runs, failures)
    emit_reports(result, resolve_out_dir(cfg, out_dir))
    return result


def highlight_best(rows: Sequence[ComparisonRow]) -> list[ComparisonRow]:
    """Flag, per target domain, the row with the lowest validation Best MSE.

    Ties go to the lower validation Best epoch, then to the earlier row.
    """
    out = [replace(r, best=False) for r in rows]
    winners: dict[str, int] = {}
    for k, r in enumerate(out):
        j = winners.get(r.target_domain)
        if j is None or (r.val_best_mse, r.val_best_epoch) < (out[j].val_best_mse, out[j].val_best_epoch):
            winners[r.target_domain] = k
    for k in winners.values():
        out[k].best = True
    return out


def _write_predictions(path: Path, rec: RunRecord) -> None:
    d = rec.data
    pred = predict(rec.report.best_network, d.test[0])
    col = d.task.column
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "actual", "predicted"])
        for day, actual, p in zip(d.test_dates, d.test_actual, pred):
            w.writerow([day.isoformat(), repr(float(actual)), repr(inverse_scale(float(p), col, d.scaler))])


def emit_reports(result: ScenarioResult, out_dir: str | os.PathLike) -> list[Path]:
    """Write the comparison table and every per-run artifact. Returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "comparison.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in [*result.rows, *result.seed_rows]:
            w.writerow(r.csv_cells())
    written.append(path)

    path = out / "comparison.json"
    payload = {
        "rows": [asdict(r) for r in result.rows],
        "seed_rows": [asdict(r) for r in result.seed_rows],
        "failures": result.failures,
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    written.append(path)

    for rec in [*result.source_runs.values(), *result.runs]:
        stem = f"{rec.mode}_{rec.seed}"
        p = out / f"loss_curve_{stem}.csv"
        rec.report.write_curves(p)
        written.append(p)
        p = out / f"report_{stem}.json"
        p.write_text(rec.report.to_json(), encoding="utf-8")
        written.append(p)
        p = out / f"predictions_{stem}.csv"
        _write_predictions(p, rec)
        written.append(p)
        p = out / f"{stem}.ckpt.json"
        save_checkpoint(rec.checkpoint, p)
        written.append(p)

    path = out / "failures.json"
    if result.failures:
        path.write_text(json.dumps(result.failures, indent=2), encoding="utf-8")
        written.append(path)
    elif path.exists():
        path.unlink()
    return written

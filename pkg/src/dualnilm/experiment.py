"""Experiment orchestration: configs, per-fold training/evaluation and CV reports.

A run directory looks like::

    out/
      config.json             resolved config (all defaults echoed)
      fold0/model.ckpt        checkpoint; meta carries the training time ranges
      fold0/trace.csv         per-epoch losses (neural models)
      fold0/metrics.csv       per-appliance, macro and injection rows
      fold0/states.png, fold0/injection.png
      metrics.csv             every fold plus one ``summary`` row per appliance
      summary.csv             mean / std per metric, formatted like "98.54 ±1.71"
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import yaml

from . import storage
from .baselines.fhmm import HmmChain, fhmm_decode, fhmm_fit
from .baselines.neural import PRESETS, BaselineConfig
from .manifest import build_household, load_manifest
from .metrics import (aggregate_cv, binarize, classification_metrics, confusion, macro_average,
                      read_report, regression_metrics, write_report)
from .model import ModelConfig
from .pipeline import (DataError, Fold, SplitMode, WindowPlan, WindowSet, read_household, segment_windows,
                       split_dataset)
from .registry import ALL_MODELS, build_model
from .training import OptimizerConfig, fit, load_checkpoint, predict, save_checkpoint
from .types import AugmentedHousehold

log = logging.getLogger(__name__)

FHMM_MAGIC = b"DNILM-FHMM-1"
SUMMARY_COLUMNS = ("dataset", "appliance", "metric", "mean", "std", "folds", "cell")
METRIC_NAMES = ("accuracy", "recall", "precision", "f1", "rmse_norm", "mae_norm", "rmse_watts", "mae_watts")


class ConfigError(ValueError):
    """Malformed experiment config or unknown model (a usage error)."""


class LeakageError(DataError):
    pass


class RegistryMismatchError(DataError):
    pass


class Interrupted(RuntimeError):
    """Cross-validation stopped early; partial results were written."""


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: Path
    model: str = "dualnilm"
    seed: int = 0
    out: Path = Path("runs/experiment")
    epochs: int = 50
    batch: int = 64
    lr: float = 1e-3
    split: SplitMode | None = None   # None: take the manifest's split
    window_length: int = 300
    train_stride: int = 10
    test_stride: int | None = None   # None: non-overlapping (window_length)
    model_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in ALL_MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(ALL_MODELS)}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.epochs < 0 or self.batch < 1 or not self.lr > 0:
            raise ConfigError("epochs >= 0, batch >= 1 and lr > 0 are required")
        if self.test_stride is None:
            object.__setattr__(self, "test_stride", self.window_length)
        if min(self.window_length, self.train_stride, self.test_stride) < 1:
            raise ConfigError("window length and strides must be >= 1")

    @property
    def torch_seed(self) -> int:
        return int(self.seed) % (2 ** 63)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"] = str(self.dataset)
        d["out"] = str(self.out)
        d["split"] = None if self.split is None else asdict(self.split)
        return d


def config_from_dict(raw: dict, base: Path | None = None) -> ExperimentConfig:
    raw = dict(raw or {})
    known = {"dataset", "model", "seed", "out", "epochs", "batch", "lr", "split", "windows", "model_config"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "dataset" not in raw:
        raise ConfigError("config needs a 'dataset' entry")
    base = base or Path(".")
    dataset = Path(raw["dataset"])
    if not dataset.is_absolute():
        dataset = base / dataset
    out = Path(raw.get("out", "runs/experiment"))
    if not out.is_absolute():
        out = base / out
    win = raw.get("windows") or {}
    split = raw.get("split")
    if isinstance(split, str):
        split = {"mode": split}
    try:
        return ExperimentConfig(
            dataset=dataset,
            model=str(raw.get("model", "dualnilm")),
            seed=int(raw.get("seed", 0)),
            out=out,
            epochs=int(raw.get("epochs", 50)),
            batch=int(raw.get("batch", 64)),
            lr=float(raw.get("lr", 1e-3)),
            split=None if split is None else SplitMode(**split),
            window_length=int(win.get("length", 300)),
            train_stride=int(win.get("train_stride", 10)),
            test_stride=None if win.get("test_stride") is None else int(win["test_stride"]),
            model_config=dict(raw.get("model_config") or {}),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return config_from_dict(raw, path.parent)


# ---------------------------------------------------------------------------
# data


def load_dataset(cfg: ExperimentConfig) -> tuple[AugmentedHousehold, SplitMode]:
    """Household plus split mode; a ``.dnilm`` file or a manifest is accepted."""
    path = Path(cfg.dataset)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    if path.suffix in (".yaml", ".yml"):
        m = load_manifest(path)
        return build_household(m), cfg.split or m.split
    return read_household(path), cfg.split or SplitMode()


def folds_for(cfg: ExperimentConfig) -> tuple[AugmentedHousehold, list[Fold]]:
    h, mode = load_dataset(cfg)
    return h, split_dataset(h, mode)


def time_ranges(h: AugmentedHousehold, ranges) -> list[list[float]]:
    t0, p = h.aggregate.start_time, h.aggregate.period
    return [[t0 + a * p, t0 + b * p] for a, b in ranges]


def check_leakage(windows: WindowSet, train_ranges) -> None:
    """Refuse test windows whose ``[start, end)`` meets any training span."""
    if not train_ranges:
        return
    tr = windows.time_ranges()
    for a, b in train_ranges:
        hit = (tr[:, 0] < b) & (tr[:, 1] > a)
        if hit.any():
            i = int(np.flatnonzero(hit)[0])
            raise LeakageError(
                f"test window {i} [{tr[i, 0]}, {tr[i, 1]}) overlaps training span [{a}, {b})"
            )


def check_registry(model_appliances, dataset_appliances) -> None:
    if tuple(model_appliances) != tuple(dataset_appliances):
        raise RegistryMismatchError(
            f"checkpoint appliances {list(model_appliances)} do not match dataset {list(dataset_appliances)}"
        )


# ---------------------------------------------------------------------------
# FHMM as a runnable model


class FhmmModel:
    arch = "fhmm"

    def __init__(self, chains: list[HmmChain], appliances: tuple[str, ...], rated_capacity: float):
        self.chains = chains
        self.appliances = tuple(appliances)
        self.rated_capacity = float(rated_capacity)

    @classmethod
    def fit(cls, segments, appliances, seed: int) -> FhmmModel:
        series = [np.concatenate([seg.appliances[k].series.active for seg in segments])
                  for k in range(len(appliances))]
        series.append(np.concatenate([seg.injection.series.active for seg in segments]))
        chains = fhmm_fit(series, names=list(appliances) + ["injection"], injection_index=len(appliances))
        return cls(chains, appliances, segments[0].injection.rated_capacity)

    def decode(self, segment: AugmentedHousehold, plan: WindowPlan):
        """Window-level states (at each window's last step) and normalized injection."""
        states, inj = fhmm_decode(segment.aggregate, self.chains)
        n = plan.count(len(segment))
        starts = np.arange(n) * plan.stride
        last = starts + plan.window_length - 1
        K = len(self.appliances)
        idx = starts[:, None] + np.arange(plan.window_length)[None, :]
        return states[last, :K].astype(np.float64), np.clip(inj[idx] / self.rated_capacity, 0.0, None)

    def save(self, path, meta: dict) -> None:
        arrays = {}
        for i, c in enumerate(self.chains):
            arrays[f"c{i}_start"] = c.start
            arrays[f"c{i}_transition"] = c.transition
            arrays[f"c{i}_means"] = c.means
            arrays[f"c{i}_variances"] = c.variances
        header = {
            "format": FHMM_MAGIC.decode(),
            "arch": self.arch,
            "appliances": list(self.appliances),
            "rated_capacity": self.rated_capacity,
            "chains": [{"name": c.name, "is_injection": c.is_injection} for c in self.chains],
            "extra": meta,
        }
        storage.write_container(path, "checkpoint", header, arrays, magic=FHMM_MAGIC)

    @classmethod
    def load(cls, path):
        _, header, arr = storage.read_container(path, magic=FHMM_MAGIC, kind="checkpoint")
        chains = [HmmChain(c["name"], arr[f"c{i}_start"], arr[f"c{i}_transition"], arr[f"c{i}_means"],
                           arr[f"c{i}_variances"], c["is_injection"]) for i, c in enumerate(header["chains"])]
        return cls(chains, tuple(header["appliances"]), header["rated_capacity"]), header["extra"]


def load_any_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(len(FHMM_MAGIC))
    if head == FHMM_MAGIC:
        return FhmmModel.load(path)
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# train / evaluate


def make_model(cfg: ExperimentConfig, appliances, T: int, F: int = 2):
    if cfg.model == "dualnilm":
        mc = ModelConfig(T=T, F=F, appliances=tuple(appliances), **cfg.model_config)
    else:
        over = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.model_config.items()}
        scale = over.pop("input_scale", 1000.0)
        mc = BaselineConfig(cfg.model, tuple(appliances), T, F, scale, over)
    try:
        return build_model(cfg.model, mc, seed=cfg.torch_seed)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class FoldResult:
    index: int
    rows: list[dict]
    seconds: float


def train_fold(cfg: ExperimentConfig, h: AugmentedHousehold, fold: Fold, out: Path, on_epoch=None):
    """Fit one fold; writes ``model.ckpt`` (and ``trace.csv`` for neural models)."""
    out.mkdir(parents=True, exist_ok=True)
    meta = {"fold": fold.index, "train_time_ranges": time_ranges(h, fold.train_ranges),
            "dataset": h.name, "seed": int(cfg.seed), "window_length": cfg.window_length}
    names = tuple(h.appliance_names)
    if cfg.model == "fhmm":
        model = FhmmModel.fit(fold.train, names, cfg.torch_seed)
        model.save(out / "model.ckpt", meta)
        return model, None
    plan = WindowPlan(cfg.window_length, cfg.train_stride)
    windows = segment_windows(fold.train, plan)
    model = make_model(cfg, names, cfg.window_length)
    opt = OptimizerConfig(lr=cfg.lr, batch_size=cfg.batch, epochs=cfg.epochs, seed=cfg.torch_seed)
    trace = fit(model, windows, opt, on_epoch=on_epoch)
    save_checkpoint(out / "model.ckpt", model, meta)
    trace.write_csv(out / "trace.csv")
    return model, trace


def _predict_fold(model, fold: Fold, plan: WindowPlan):
    if isinstance(model, FhmmModel):
        parts = [model.decode(seg, plan) for seg in fold.test if len(seg) >= plan.window_length]
        if not parts:
            raise DataError("no test segment is long enough for one window")
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    ws = segment_windows(fold.test, plan)
    return predict(model, ws)


def fold_rows(dataset: str, fold: str, names, states_true, probs, inj_true, inj_pred, rated: float) -> list[dict]:
    rows, per_app = [], []
    if probs is not None:
        pred = binarize(probs)
        for k, name in enumerate(names):
            m = classification_metrics(confusion(pred[:, k], states_true[:, k]))
            per_app.append(m)
            rows.append({"dataset": dataset, "fold": fold, "appliance": name, **m._asdict()})
        rows.append({"dataset": dataset, "fold": fold, "appliance": "macro", **macro_average(per_app)._asdict()})
    if inj_pred is not None:
        rmse, mae = regression_metrics(inj_pred.ravel(), inj_true.ravel())
        rows.append({"dataset": dataset, "fold": fold, "appliance": "injection", "rmse_norm": rmse,
                     "mae_norm": mae, "rmse_watts": rmse * rated, "mae_watts": mae * rated})
    return rows


def evaluate_fold(cfg: ExperimentConfig, h: AugmentedHousehold, fold: Fold, model, train_ranges,
                  out: Path | None = None) -> list[dict]:
    """Metric rows for one fold after the leakage and registry checks."""
    check_registry(model.appliances, h.appliance_names)
    plan = WindowPlan(cfg.window_length, cfg.test_stride)
    truth = segment_windows(fold.test, plan)
    check_leakage(truth, train_ranges)
    probs, inj = _predict_fold(model, fold, plan)
    rows = fold_rows(h.name, str(fold.index), h.appliance_names, truth.states, probs,
                     truth.injection, inj, truth.rated_capacity)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_report(out / "metrics.csv", rows)
        from .plots import injection_overlay, state_raster

        if probs is not None:
            state_raster(out / "states.png", truth.states, binarize(probs), h.appliance_names)
        if inj is not None:
            injection_overlay(out / "injection.png", truth.injection, inj, truth.rated_capacity)
    return rows


def summarize(rows: list[dict]) -> tuple[list[dict], list[dict]]:
    """Per-(dataset, appliance) summary rows for the report and the mean/std table."""
    keys = []
    for r in rows:
        k = (r["dataset"], r["appliance"])
        if k not in keys:
            keys.append(k)
    report, table = [], []
    for ds, app in keys:
        sel = [r for r in rows if r["dataset"] == ds and r["appliance"] == app]
        srow = {"dataset": ds, "fold": "summary", "appliance": app}
        for m in METRIC_NAMES:
            vals = [r[m] for r in sel if r.get(m) is not None]
            if not vals:
                continue
            s = aggregate_cv(vals)
            srow[m] = s.mean
            scale = 100.0 if m in ("accuracy", "recall", "precision", "f1") else 1.0
            table.append({"dataset": ds, "appliance": app, "metric": m, "mean": s.mean, "std": s.std,
                          "folds": len(vals), "cell": f"{s.mean * scale:.2f} ±{s.std * scale:.2f}"})
        report.append(srow)
    return report, table


def write_summary(path, table: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in table:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{**r, "mean": float(r["mean"]), "std": float(r["std"]), "folds": int(r["folds"])}
                for r in csv.DictReader(fh)]


def write_run_config(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def run_train(cfg: ExperimentConfig, fold_index: int = 0):
    h, folds = folds_for(cfg)
    if not 0 <= fold_index < len(folds):
        raise ConfigError(f"fold {fold_index} out of range (0..{len(folds) - 1})")
    write_run_config(cfg, cfg.out)
    return train_fold(cfg, h, folds[fold_index], cfg.out / f"fold{fold_index}")


def run_evaluate(cfg: ExperimentConfig, checkpoint=None, fold_index: int = 0) -> list[dict]:
    h, folds = folds_for(cfg)
    if not 0 <= fold_index < len(folds):
        raise ConfigError(f"fold {fold_index} out of range (0..{len(folds) - 1})")
    out = cfg.out / f"fold{fold_index}"
    model, meta = load_any_checkpoint(checkpoint or out / "model.ckpt")
    rows = evaluate_fold(cfg, h, folds[fold_index], model, meta.get("train_time_ranges", []), out)
    report, table = summarize(rows)
    write_report(cfg.out / "metrics.csv", rows + report)
    write_summary(cfg.out / "summary.csv", table)
    return rows


def run_crossval(cfg: ExperimentConfig, max_folds: int | None = None) -> list[dict]:
    """Train and evaluate every fold; write ``metrics.csv`` and ``summary.csv``.

    If a fold fails or the run is interrupted, the finished folds go to
    ``partial_results.csv`` and :class:`Interrupted` is raised.
    """
    h, folds = folds_for(cfg)
    write_run_config(cfg, cfg.out)
    rows: list[dict] = []
    for fold in folds[:max_folds]:
        t0 = time.perf_counter()
        out = cfg.out / f"fold{fold.index}"
        try:
            model, _ = train_fold(cfg, h, fold, out)
            rows += evaluate_fold(cfg, h, fold, model, time_ranges(h, fold.train_ranges), out)
        except (KeyboardInterrupt, Exception) as exc:
            write_report(cfg.out / "partial_results.csv", rows)
            raise Interrupted(f"fold {fold.index} did not finish ({type(exc).__name__}: {exc}); "
                              f"{len({r['fold'] for r in rows})} fold(s) saved to partial_results.csv") from exc
        log.info("fold %d done in %.1fs", fold.index, time.perf_counter() - t0)
    report, table = summarize(rows)
    write_report(cfg.out / "metrics.csv", rows + report)
    write_summary(cfg.out / "summary.csv", table)
    return rows + report


def collect_reports(paths) -> list[dict]:
    rows = []
    for p in paths:
        rows += [r for r in read_report(p) if r["fold"] != "summary"]
    return rows

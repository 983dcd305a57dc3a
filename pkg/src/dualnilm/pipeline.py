"""Meter ingestion, alignment, labelling, injection synthesis and windowing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import storage
from .pvsim import cap_and_inject, hold_indices, reactive_power
from .types import (
    ApplianceSpec,
    ApplianceTrack,
    AugmentedHousehold,
    InjectionProfile,
    PowerSeries,
    StateSequence,
    WindowedSample,
)

DAY = 86400.0
SPLIT_MODES = ("chronological", "test_initial", "test_middle", "leave_one_day_out")


class DataError(ValueError):
    """Base class for ingestion and dataset-construction failures."""


class ChannelParseError(DataError):
    pass


class NonMonotoneError(DataError):
    pass


class GridMismatchError(DataError):
    pass


class SpanError(DataError):
    pass


# ---------------------------------------------------------------------------
# ingestion


def _tzinfo(tz):
    if tz is None or isinstance(tz, timezone):
        return tz or timezone.utc
    if isinstance(tz, (int, float)):
        return timezone(timedelta(hours=tz))
    text = str(tz).strip()
    if text.upper() in ("UTC", "Z"):
        return timezone.utc
    if text[0] in "+-":
        sign = -1 if text[0] == "-" else 1
        hh, _, mm = text[1:].partition(":")
        return timezone(sign * timedelta(hours=int(hh), minutes=int(mm or 0)))
    return ZoneInfo(text)


def parse_timestamp(text: str, tz=timezone.utc) -> float:
    """ISO-8601 or numeric epoch seconds -> UTC epoch seconds.

    Naive timestamps are interpreted in ``tz``.
    """
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=_tzinfo(tz))
    return ts.timestamp()


def format_timestamp(epoch: float) -> str:
    ts = datetime.fromtimestamp(epoch, tz=timezone.utc)
    return ts.isoformat().replace("+00:00", "Z")


def load_channel(path, tz="UTC", channel_id: str | None = None) -> PowerSeries:
    """Read a ``timestamp, watts[, vars]`` CSV into a uniform UTC series.

    The sampling period is the median timestamp step; irregular samples
    are held onto that grid.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"channel file not found: {path}")
    zone = _tzinfo(tz)
    times, watts, vars_ = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ChannelParseError(f"{path}:1: empty file")
        cols = [c.strip().lower() for c in header]
        if len(cols) < 2 or not cols[0].startswith("timestamp") or cols[1] != "watts":
            raise ChannelParseError(f"{path}:1: expected header 'timestamp_utc,watts[,vars]'")
        has_vars = len(cols) > 2 and cols[2] == "vars"
        for row in reader:
            line = reader.line_num
            if not row or not "".join(row).strip():
                continue
            try:
                t = parse_timestamp(row[0], zone)
                w = float(row[1])
                v = float(row[2]) if has_vars else None
            except (ValueError, IndexError) as exc:
                raise ChannelParseError(f"{path}:{line}: {exc}") from None
            if times and t <= times[-1]:
                raise NonMonotoneError(f"{path}:{line}: timestamp not after previous row")
            times.append(t)
            watts.append(w)
            if has_vars:
                vars_.append(v)
    if not times:
        raise ChannelParseError(f"{path}: no data rows")
    times = np.array(times)
    if times.size == 1:
        period = 1.0
    else:
        period = float(np.median(np.diff(times)))
    length = int(math.floor((times[-1] - times[0]) / period + 1e-9)) + 1
    grid_t = times[0] + np.arange(length) * period
    idx = np.clip(np.searchsorted(times, grid_t + 1e-9 * period, side="right") - 1, 0, times.size - 1)
    active = np.array(watts)[idx]
    reactive = np.array(vars_)[idx] if has_vars else None
    return PowerSeries(times[0], period, active, reactive, channel_id or path.stem)


def write_channel(path, series: PowerSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        has_q = series.reactive is not None
        w.writerow(["timestamp_utc", "watts", "vars"] if has_q else ["timestamp_utc", "watts"])
        for k, t in enumerate(series.timestamps()):
            row = [format_timestamp(t), repr(float(series.active[k]))]
            if has_q:
                row.append(repr(float(series.reactive[k])))
            w.writerow(row)


# ---------------------------------------------------------------------------
# alignment and labelling


def resample_align(series: PowerSeries, grid) -> PowerSeries:
    """Forward-fill ``series`` onto ``grid = (start, period, length)``.

    Grid points before the first sample take the first sample's value.
    """
    if len(series) == 0:
        raise DataError("cannot resample an empty series")
    start, period, length = grid
    idx = hold_indices(series.start_time, series.period, len(series), (start, period, length))
    reactive = None if series.reactive is None else series.reactive[idx]
    return PowerSeries(start, period, series.active[idx], reactive, series.channel_id)


def label_states(series: PowerSeries, spec: ApplianceSpec) -> StateSequence:
    """ON iff active power strictly exceeds the threshold."""
    states = (series.active > spec.on_threshold).astype(np.uint8)
    return StateSequence(spec, states, series)


def synthesize_reactive(series: PowerSeries, pf: float) -> PowerSeries:
    return series.with_reactive(reactive_power(series.active, pf))


def synthesize_household(
    appliance_series,
    specs,
    injection: InjectionProfile,
    *,
    residual: PowerSeries | None = None,
    residual_pf: float = 1.0,
    injection_spec: ApplianceSpec | None = None,
    name: str = "household",
) -> AugmentedHousehold:
    """Sum appliances, net off capped generation and label states.

    Missing reactive channels are synthesized from each spec's power
    factor. The stored injection holds the capped generation with its
    reactive power recomputed from the capped watts. ``injection_spec``,
    when given, adds a labelled track for the generator itself.
    """
    appliance_series = list(appliance_series)
    specs = list(specs)
    if len(appliance_series) != len(specs):
        raise ValueError("one spec per appliance series required")
    if not appliance_series:
        raise ValueError("at least one appliance is required")
    grid = appliance_series[0].grid
    members = appliance_series + ([residual] if residual is not None else []) + [injection.series]
    for s in members:
        if s.grid != grid:
            raise GridMismatchError(f"channel {s.channel_id!r} grid {s.grid} != {grid}")

    filled = [s if s.reactive is not None else synthesize_reactive(s, spec.power_factor)
              for s, spec in zip(appliance_series, specs)]
    p_agg = np.sum([s.active for s in filled], axis=0)
    q_agg = np.sum([s.reactive for s in filled], axis=0)
    if residual is not None:
        if residual.reactive is None:
            residual = synthesize_reactive(residual, residual_pf)
        p_agg = p_agg + residual.active
        q_agg = q_agg + residual.reactive

    p_pv_adj, p_net = cap_and_inject(injection.series.active, p_agg)
    q_pv_adj = reactive_power(p_pv_adj, injection.power_factor)
    q_net = np.maximum(0.0, q_agg - q_pv_adj)

    start, period, _ = grid
    aggregate = PowerSeries(start, period, p_net, q_net, channel_id="aggregate")
    inj_series = PowerSeries(start, period, p_pv_adj, q_pv_adj, channel_id="injection")
    stored = InjectionProfile(inj_series, injection.rated_capacity,
                              injection.inverter_efficiency, injection.power_factor)

    tracks = [ApplianceTrack(spec, label_states(s, spec), s) for s, spec in zip(filled, specs)]
    if injection_spec is not None:
        if not injection_spec.is_injection:
            raise ValueError("injection_spec must have is_injection=True")
        tracks.append(ApplianceTrack(injection_spec, label_states(inj_series, injection_spec), inj_series))
    return AugmentedHousehold(aggregate, tuple(tracks), stored, name=name)


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class WindowPlan:
    window_length: int = 300
    stride: int = 1

    def __post_init__(self):
        if self.window_length < 1 or self.stride < 1:
            raise ValueError("window_length and stride must be >= 1")

    def count(self, length: int) -> int:
        if length < self.window_length:
            return 0
        return (length - self.window_length) // self.stride + 1


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Stacked windows: ``inputs[N, T, F]``, ``states[N, K]``, ``injection[N, T]``."""

    inputs: np.ndarray
    states: np.ndarray
    injection: np.ndarray
    start_time: np.ndarray
    appliance_names: tuple[str, ...]
    rated_capacity: float
    period: float

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def window_length(self) -> int:
        return self.inputs.shape[1]

    def time_ranges(self) -> np.ndarray:
        ends = self.start_time + self.window_length * self.period
        return np.stack([self.start_time, ends], axis=1)

    def samples(self) -> list[WindowedSample]:
        return [
            WindowedSample(self.inputs[i], self.states[i], self.injection[i],
                           start_index=i, start_time=float(self.start_time[i]), period=self.period)
            for i in range(len(self))
        ]

    @staticmethod
    def concat(sets: list[WindowSet]) -> WindowSet:
        if not sets:
            raise ValueError("nothing to concatenate")
        first = sets[0]
        for s in sets[1:]:
            if s.appliance_names != first.appliance_names:
                raise ValueError("appliance registries differ")
        return WindowSet(
            inputs=np.concatenate([s.inputs for s in sets]),
            states=np.concatenate([s.states for s in sets]),
            injection=np.concatenate([s.injection for s in sets]),
            start_time=np.concatenate([s.start_time for s in sets]),
            appliance_names=first.appliance_names,
            rated_capacity=first.rated_capacity,
            period=first.period,
        )


def window_arrays(h: AugmentedHousehold, plan: WindowPlan) -> WindowSet:
    """Vectorized window extraction; raises if the series is too short."""
    L, T = len(h), plan.window_length
    if L < T:
        raise DataError(f"series length {L} shorter than window length {T}")
    if h.aggregate.reactive is None:
        raise DataError("aggregate reactive channel missing")
    starts = np.arange(plan.count(L)) * plan.stride
    feats = np.stack([h.aggregate.active, h.aggregate.reactive], axis=1)
    inputs = sliding_window_view(feats, T, axis=0)[:: plan.stride].transpose(0, 2, 1).copy()
    last = starts + T - 1
    states = np.stack([t.states.states[last] for t in h.appliances], axis=1).astype(np.uint8)
    inj = h.injection.series.active / h.injection.rated_capacity
    target = sliding_window_view(inj, T)[:: plan.stride].copy()
    return WindowSet(
        inputs=inputs,
        states=states,
        injection=np.clip(target, 0.0, 1.0),
        start_time=h.aggregate.start_time + starts * h.aggregate.period,
        appliance_names=tuple(h.appliance_names),
        rated_capacity=h.injection.rated_capacity,
        period=h.aggregate.period,
    )


def extract_windows(h: AugmentedHousehold, plan: WindowPlan) -> list[WindowedSample]:
    ws = window_arrays(h, plan)
    starts = np.arange(len(ws)) * plan.stride
    return [
        WindowedSample(ws.inputs[i], ws.states[i], ws.injection[i], start_index=int(starts[i]),
                       start_time=float(ws.start_time[i]), period=ws.period)
        for i in range(len(ws))
    ]


def segment_windows(segments, plan: WindowPlan) -> WindowSet:
    """Windows from each segment separately; segments shorter than T are skipped."""
    sets = [window_arrays(seg, plan) for seg in segments if len(seg) >= plan.window_length]
    if not sets:
        raise DataError("no segment is long enough for one window")
    return WindowSet.concat(sets)


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitMode:
    mode: str = "chronological"
    test_days: float = 1.0

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise ValueError(f"unknown split mode {self.mode!r}; choose from {SPLIT_MODES}")
        if not self.test_days > 0:
            raise ValueError("test_days must be positive")


@dataclass(frozen=True)
class Fold:
    index: int
    train_ranges: tuple[tuple[int, int], ...]
    test_ranges: tuple[tuple[int, int], ...]
    train: tuple[AugmentedHousehold, ...] = field(repr=False)
    test: tuple[AugmentedHousehold, ...] = field(repr=False)


def _fold(h: AugmentedHousehold, index: int, test: tuple[int, int]) -> Fold:
    a, b = test
    train = tuple(r for r in ((0, a), (b, len(h))) if r[1] > r[0])
    return Fold(
        index=index,
        train_ranges=train,
        test_ranges=(test,),
        train=tuple(h.slice(*r) for r in train),
        test=(h.slice(a, b),),
    )


def split_dataset(h: AugmentedHousehold, mode: SplitMode) -> list[Fold]:
    """Partition into folds of contiguous train/test index ranges.

    Day boundaries for ``leave_one_day_out`` are UTC calendar days; other
    modes measure ``test_days`` from the first sample.
    """
    L = len(h)
    period = h.aggregate.period
    per_day = DAY / period
    if mode.mode == "leave_one_day_out":
        t = h.aggregate.timestamps()
        day = np.floor(t / DAY).astype(np.int64)
        edges = np.flatnonzero(np.diff(day)) + 1
        bounds = np.concatenate([[0], edges, [L]])
        if bounds.size < 3:
            raise SpanError("leave_one_day_out needs at least two calendar days")
        return [_fold(h, i, (int(bounds[i]), int(bounds[i + 1]))) for i in range(bounds.size - 1)]

    n_test = int(round(mode.test_days * per_day))
    if n_test >= L:
        raise SpanError(f"test span of {mode.test_days} days exceeds the dataset")
    if mode.mode == "chronological":
        a = L - n_test
    elif mode.mode == "test_initial":
        a = 0
    else:
        total_days = L / per_day
        a = int(round(math.floor((total_days - mode.test_days) / 2) * per_day))
        a = min(max(a, 0), L - n_test)
    return [_fold(h, 0, (a, a + n_test))]


# ---------------------------------------------------------------------------
# persistence


def write_household(path, h: AugmentedHousehold) -> None:
    arrays = {
        "aggregate_active": h.aggregate.active,
        "aggregate_reactive": h.aggregate.reactive,
        "injection_active": h.injection.series.active,
        "injection_reactive": h.injection.series.reactive,
    }
    apps = []
    for i, (spec, states, series) in enumerate(h.appliances):
        arrays[f"app{i}_active"] = series.active
        if series.reactive is not None:
            arrays[f"app{i}_reactive"] = series.reactive
        arrays[f"app{i}_states"] = states.states
        apps.append({"name": spec.name, "on_threshold": spec.on_threshold,
                     "power_factor": spec.power_factor, "is_injection": spec.is_injection,
                     "channel_id": series.channel_id})
    arrays = {k: v for k, v in arrays.items() if v is not None}
    meta = {
        "name": h.name,
        "start_time": h.aggregate.start_time,
        "period": h.aggregate.period,
        "appliances": apps,
        "injection": {"rated_capacity": h.injection.rated_capacity,
                      "inverter_efficiency": h.injection.inverter_efficiency,
                      "power_factor": h.injection.power_factor},
    }
    storage.write_container(path, "household", meta, arrays)


def read_household(path) -> AugmentedHousehold:
    _, meta, arr = storage.read_container(path, kind="household")
    start, period = meta["start_time"], meta["period"]

    def series(prefix, cid):
        return PowerSeries(start, period, arr[f"{prefix}_active"], arr.get(f"{prefix}_reactive"), cid)

    tracks = []
    for i, a in enumerate(meta["appliances"]):
        spec = ApplianceSpec(a["name"], a["on_threshold"], a["power_factor"], a["is_injection"])
        s = series(f"app{i}", a["channel_id"])
        tracks.append(ApplianceTrack(spec, StateSequence(spec, arr[f"app{i}_states"], s), s))
    inj = meta["injection"]
    return AugmentedHousehold(
        aggregate=series("aggregate", "aggregate"),
        appliances=tuple(tracks),
        injection=InjectionProfile(series("injection", "injection"), inj["rated_capacity"],
                                   inj["inverter_efficiency"], inj["power_factor"]),
        name=meta["name"],
    )


def write_windows(path, ws: WindowSet, meta: dict | None = None) -> None:
    """Window dataset file: ``inputs[N,T,F]`` f8, ``states[N,K]`` u1,
    ``injection[N,T]`` f8 normalized, ``start_time[N]`` f8."""
    header = {
        "appliances": list(ws.appliance_names),
        "rated_capacity": ws.rated_capacity,
        "period": ws.period,
        "features": ["active_w", "reactive_var"],
        **(meta or {}),
    }
    storage.write_container(path, "windows", header, {
        "inputs": ws.inputs, "states": ws.states,
        "injection": ws.injection, "start_time": ws.start_time,
    })


def read_windows(path) -> WindowSet:
    _, meta, arr = storage.read_container(path, kind="windows")
    return WindowSet(arr["inputs"], arr["states"], arr["injection"], arr["start_time"],
                     tuple(meta["appliances"]), meta["rated_capacity"], meta["period"])

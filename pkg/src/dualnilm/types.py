"""Shared data model: power series, appliance specs, labels and households.

All containers are frozen dataclasses holding read-only numpy arrays.
Scalar invariants are enforced at construction; whole-array invariants
(signs, bounds, grid alignment) are reported by :func:`validate_household`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PowerSeries:
    """Uniformly sampled active (W) and optional reactive (var) power.

    Sample ``k`` sits at ``start_time + k * period`` (UTC epoch seconds).
    """

    start_time: float
    period: float
    active: np.ndarray
    reactive: np.ndarray | None = None
    channel_id: str = ""

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")
        active = _frozen(self.active, np.float64)
        if active.ndim != 1 or active.size < 1:
            raise ValueError("active must be a non-empty 1-D sequence")
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "period", float(self.period))
        if self.reactive is not None:
            reactive = _frozen(self.reactive, np.float64)
            if reactive.shape != active.shape:
                raise ValueError(
                    f"reactive length {reactive.size} != active length {active.size}"
                )
            object.__setattr__(self, "reactive", reactive)

    def __len__(self) -> int:
        return self.active.size

    @property
    def grid(self) -> tuple[float, float, int]:
        return (self.start_time, self.period, len(self))

    @property
    def end_time(self) -> float:
        """Exclusive end of the covered span."""
        return self.start_time + len(self) * self.period

    def timestamps(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) * self.period

    def same_grid(self, other: PowerSeries) -> bool:
        return self.grid == other.grid

    def slice(self, start: int, stop: int) -> PowerSeries:
        """Sub-series over sample indices ``[start, stop)``."""
        return PowerSeries(
            start_time=self.start_time + start * self.period,
            period=self.period,
            active=self.active[start:stop],
            reactive=None if self.reactive is None else self.reactive[start:stop],
            channel_id=self.channel_id,
        )

    def with_reactive(self, reactive) -> PowerSeries:
        return PowerSeries(self.start_time, self.period, self.active, reactive, self.channel_id)


@dataclass(frozen=True)
class ApplianceSpec:
    name: str
    on_threshold: float
    power_factor: float = 1.0
    is_injection: bool = False

    def __post_init__(self):
        if not self.on_threshold >= 0:
            raise ValueError(f"{self.name}: on_threshold must be >= 0")
        if not 0 < self.power_factor <= 1:
            raise ValueError(f"{self.name}: power_factor must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class StateSequence:
    appliance: ApplianceSpec
    states: np.ndarray
    aligned_to: PowerSeries

    def __post_init__(self):
        states = np.asarray(self.states)
        if states.size and not np.isin(states, (0, 1)).all():
            raise ValueError(f"{self.appliance.name}: states must be 0/1")
        object.__setattr__(self, "states", _frozen(states, np.uint8))

    def __len__(self) -> int:
        return self.states.size


@dataclass(frozen=True, eq=False)
class InjectionProfile:
    """Behind-the-meter generation (positive watts) with its rating."""

    series: PowerSeries
    rated_capacity: float
    inverter_efficiency: float = 0.96
    power_factor: float = 0.98

    def __post_init__(self):
        if not self.rated_capacity > 0:
            raise ValueError("rated_capacity must be positive")
        if not 0 < self.inverter_efficiency <= 1:
            raise ValueError("inverter_efficiency must lie in (0, 1]")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power_factor must lie in (0, 1]")


@dataclass(frozen=True)
class ApplianceTrack:
    spec: ApplianceSpec
    states: StateSequence
    series: PowerSeries

    # lets callers unpack as (spec, states, series)
    def __iter__(self):
        return iter((self.spec, self.states, self.series))


@dataclass(frozen=True, eq=False)
class AugmentedHousehold:
    """Net metered load after injection, plus the labelled appliance tracks."""

    aggregate: PowerSeries
    appliances: tuple[ApplianceTrack, ...]
    injection: InjectionProfile
    name: str = "household"

    def __post_init__(self):
        tracks = tuple(
            t if isinstance(t, ApplianceTrack) else ApplianceTrack(*t) for t in self.appliances
        )
        object.__setattr__(self, "appliances", tracks)

    def __len__(self) -> int:
        return len(self.aggregate)

    @property
    def appliance_names(self) -> list[str]:
        return [t.spec.name for t in self.appliances]

    def slice(self, start: int, stop: int) -> AugmentedHousehold:
        agg = self.aggregate.slice(start, stop)
        tracks = []
        for spec, states, series in self.appliances:
            sub = series.slice(start, stop)
            tracks.append(ApplianceTrack(spec, StateSequence(spec, states.states[start:stop], sub), sub))
        inj = self.injection
        return AugmentedHousehold(
            aggregate=agg,
            appliances=tuple(tracks),
            injection=InjectionProfile(
                inj.series.slice(start, stop),
                inj.rated_capacity,
                inj.inverter_efficiency,
                inj.power_factor,
            ),
            name=self.name,
        )


@dataclass(frozen=True, eq=False)
class WindowedSample:
    """One model input window.

    ``inputs`` is ``T x F`` raw watts/vars; ``state_labels`` are the
    appliance states at the window's last index; ``injection_target`` is
    injection watts divided by rated capacity.
    """

    inputs: np.ndarray
    state_labels: np.ndarray
    injection_target: np.ndarray
    start_index: int = 0
    start_time: float = 0.0
    period: float = 1.0

    def __post_init__(self):
        inputs = _frozen(self.inputs, np.float64)
        labels = _frozen(self.state_labels, np.uint8)
        target = _frozen(self.injection_target, np.float64)
        if inputs.ndim != 2:
            raise ValueError("inputs must be T x F")
        if labels.ndim != 1 or labels.size < 1:
            raise ValueError("state_labels must be a non-empty vector")
        if target.shape != (inputs.shape[0],):
            raise ValueError("injection_target length must equal T")
        if np.any(target < 0) or np.any(target > 1):
            raise ValueError("injection_target must lie in [0, 1]")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "state_labels", labels)
        object.__setattr__(self, "injection_target", target)

    @property
    def time_range(self) -> tuple[float, float]:
        return (self.start_time, self.start_time + self.inputs.shape[0] * self.period)


def _first_bad(mask: np.ndarray) -> int | None:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def _check_series(label: str, s: PowerSeries, out: list[str], *, nonneg: bool = False):
    for chan, values in (("active", s.active), ("reactive", s.reactive)):
        if values is None:
            continue
        i = _first_bad(~np.isfinite(values))
        if i is not None:
            out.append(f"{label}.{chan}: non-finite value at index {i}")
        if nonneg:
            i = _first_bad(values < 0)
            if i is not None:
                out.append(f"{label}.{chan}: negative value at index {i}")


def validate_household(h: AugmentedHousehold) -> list[str]:
    """Return a list of invariant violations; empty means valid."""
    out: list[str] = []
    grid = h.aggregate.grid

    def grid_check(label: str, s: PowerSeries):
        if s.grid != grid:
            out.append(f"{label}: grid mismatch {s.grid} vs aggregate {grid}")

    _check_series("aggregate", h.aggregate, out, nonneg=True)
    if h.aggregate.reactive is None:
        out.append("aggregate.reactive: missing")

    n_injection = 0
    for spec, states, series in h.appliances:
        label = f"appliance[{spec.name}]"
        n_injection += spec.is_injection
        grid_check(label, series)
        _check_series(label, series, out)
        if states.appliance != spec:
            out.append(f"{label}.states: labels belong to {states.appliance.name}")
        if len(states) != len(series):
            out.append(f"{label}.states: length {len(states)} != series length {len(series)}")
    if n_injection > 1:
        out.append(f"appliances: {n_injection} specs flagged is_injection, at most one allowed")

    inj = h.injection
    grid_check("injection", inj.series)
    _check_series("injection", inj.series, out, nonneg=True)
    i = _first_bad(inj.series.active > inj.rated_capacity)
    if i is not None:
        out.append(f"injection.active: exceeds rated capacity at index {i}")
    return out

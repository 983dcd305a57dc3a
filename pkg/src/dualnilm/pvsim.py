"""Rooftop PV injection: irradiance -> cell temperature -> derated output.

All formulas accept scalars or numpy arrays and broadcast.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .types import InjectionProfile, PowerSeries


class CoverageGapError(ValueError):
    """Irradiance data ends before the requested grid does."""


@dataclass(frozen=True)
class PvConfig:
    p_rated: float
    t_noct: float = 45.0
    gamma: float = -0.005
    eta_inv: float = 0.96
    power_factor: float = 0.98

    def __post_init__(self):
        if not self.p_rated > 0:
            raise ValueError("p_rated must be positive")
        if not 0 < self.eta_inv <= 1:
            raise ValueError("eta_inv must lie in (0, 1]")
        if not self.gamma < 0:
            raise ValueError("gamma must be negative")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power_factor must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class IrradianceSeries:
    start_time: float
    period: float
    ghi: np.ndarray
    t_ambient: np.ndarray

    def __post_init__(self):
        ghi = np.asarray(self.ghi, dtype=np.float64)
        temp = np.asarray(self.t_ambient, dtype=np.float64)
        if ghi.shape != temp.shape or ghi.ndim != 1 or ghi.size == 0:
            raise ValueError("ghi and t_ambient must be equal-length non-empty vectors")
        if np.any(ghi < 0):
            raise ValueError("ghi must be non-negative")
        if not self.period > 0:
            raise ValueError("period must be positive")
        object.__setattr__(self, "ghi", ghi)
        object.__setattr__(self, "t_ambient", temp)

    @property
    def end_time(self) -> float:
        return self.start_time + self.ghi.size * self.period


def _check_ghi(ghi):
    if np.any(np.asarray(ghi) < 0):
        raise ValueError("GHI must be non-negative")


def cell_temperature(t_ambient, ghi, t_noct=45.0):
    """NOCT cell temperature model (degrees C)."""
    _check_ghi(ghi)
    return t_ambient + (np.asarray(ghi, dtype=np.float64) / 1000.0) * ((t_noct - 20.0) / 0.8)


def efficiency_adjustment(t_cell, gamma=-0.005):
    """Linear temperature derating relative to 25 C."""
    return 1.0 + gamma * (np.asarray(t_cell, dtype=np.float64) - 25.0)


def pv_power(ghi, cfg: PvConfig, eta_adj):
    """AC output in watts, clipped to ``[0, cfg.p_rated]``.

    Negative derating factors (cell temperatures far above any physical
    operating point) are treated as zero output.
    """
    _check_ghi(ghi)
    ghi = np.asarray(ghi, dtype=np.float64)
    eta_adj = np.maximum(np.asarray(eta_adj, dtype=np.float64), 0.0)
    return np.minimum(cfg.p_rated, ghi * cfg.p_rated / 1000.0 * eta_adj * cfg.eta_inv)


def reactive_power(p, pf):
    """Reactive power ``P * tan(arccos(pf))``; exactly zero at unity pf."""
    if not 0 < pf <= 1:
        raise ValueError(f"power factor must lie in (0, 1], got {pf}")
    p = np.asarray(p, dtype=np.float64)
    if pf == 1:
        return np.zeros_like(p)
    return p * np.tan(np.arccos(pf))


def cap_and_inject(p_pv, p_agg):
    """Cap generation at instantaneous consumption and net it off.

    Returns ``(p_pv_adjusted, p_agg_injected)``. The adjusted value is
    recovered as ``p_agg - injected``, which is exact in floating point
    (the subtrahend comes from the same pair), so the two parts always sum
    back to ``p_agg`` bit for bit. It can differ from ``min(p_pv, p_agg)``
    by one rounding step.
    """
    p_pv = np.asarray(p_pv, dtype=np.float64)
    p_agg = np.asarray(p_agg, dtype=np.float64)
    capped = np.minimum(p_pv, p_agg)
    injected = np.maximum(0.0, p_agg - capped)
    adjusted = np.where(injected > 0, p_agg - injected, capped)
    return adjusted, injected


def hold_indices(src_start: float, src_period: float, n_src: int, grid) -> np.ndarray:
    """Index of the most recent source sample at each grid point.

    Grid points before the first source sample map to index 0 (back-fill).
    """
    start, period, length = grid
    t = start + np.arange(length) * period
    src_t = src_start + np.arange(n_src) * src_period
    idx = np.searchsorted(src_t, t, side="right") - 1
    return np.clip(idx, 0, n_src - 1)


def simulate_profile(irr: IrradianceSeries, cfg: PvConfig, target_grid) -> InjectionProfile:
    """Expand irradiance onto ``target_grid = (start, period, length)``."""
    start, period, length = target_grid
    grid_end = start + length * period
    if irr.end_time < grid_end:
        raise CoverageGapError(
            f"irradiance ends at {irr.end_time} but grid runs to {grid_end}"
        )
    idx = hold_indices(irr.start_time, irr.period, irr.ghi.size, target_grid)
    ghi = irr.ghi[idx]
    t_cell = cell_temperature(irr.t_ambient[idx], ghi, cfg.t_noct)
    p = pv_power(ghi, cfg, efficiency_adjustment(t_cell, cfg.gamma))
    q = reactive_power(p, cfg.power_factor)
    series = PowerSeries(start, period, p, q, channel_id="pv")
    return InjectionProfile(series, cfg.p_rated, cfg.eta_inv, cfg.power_factor)


def _parse_utc(text: str) -> float:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.timestamp()


def read_irradiance_csv(path) -> IrradianceSeries:
    """Read ``timestamp_utc, ghi_wm2, t_ambient_c`` rows on a uniform grid."""
    times, ghi, temp = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"timestamp_utc", "ghi_wm2", "t_ambient_c"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                times.append(_parse_utc(row["timestamp_utc"]))
                ghi.append(float(row["ghi_wm2"]))
                temp.append(float(row["t_ambient_c"]))
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{reader.line_num}: {exc}") from None
    if not times:
        raise ValueError(f"{path}: no data rows")
    steps = np.diff(times)
    if steps.size and (np.any(steps <= 0) or not np.allclose(steps, steps[0])):
        raise ValueError(f"{path}: timestamps must be uniformly increasing")
    period = float(steps[0]) if steps.size else 1800.0
    return IrradianceSeries(times[0], period, np.array(ghi), np.array(temp))


def write_irradiance_csv(path, irr: IrradianceSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_utc", "ghi_wm2", "t_ambient_c"])
        for k in range(irr.ghi.size):
            ts = datetime.fromtimestamp(irr.start_time + k * irr.period, tz=timezone.utc)
            w.writerow([ts.isoformat().replace("+00:00", "Z"), repr(float(irr.ghi[k])),
                        repr(float(irr.t_ambient[k]))])

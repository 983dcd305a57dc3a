"""Controlled synthetic household for smoke tests and desk-scale runs.

Two square-wave appliances, a noisy residual load and a clear-sky style
sinusoidal irradiance day, written out as ordinary channel files plus a
manifest so the full ingestion path is exercised.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .pipeline import DAY, write_channel
from .pvsim import IrradianceSeries, write_irradiance_csv
from .types import PowerSeries

TOY_START = 1717200000.0  # 2024-06-01T00:00:00Z


@dataclass(frozen=True)
class SquareWave:
    name: str
    watts: float
    cycle_s: float
    duty: float
    phase_s: float
    threshold: float
    power_factor: float


TOY_APPLIANCES = (
    SquareWave("lamp", 200.0, 37 * 60, 0.35, 11 * 60, 100.0, 0.85),
    SquareWave("heater", 1000.0, 83 * 60, 0.55, 0.0, 500.0, 0.90),
)


def square_wave(t: np.ndarray, w: SquareWave) -> np.ndarray:
    frac = np.mod(t - TOY_START + w.phase_s, w.cycle_s) / w.cycle_s
    return np.where(frac < w.duty, w.watts, 0.0)


def toy_irradiance(days: float, start: float = TOY_START, peak_ghi: float = 900.0) -> IrradianceSeries:
    """Half-hourly GHI following a sine between 06:00 and 18:00 UTC."""
    n = int(np.ceil(days * 48)) + 1
    t = start + np.arange(n) * 1800.0
    hour = np.mod(t, DAY) / 3600.0
    ghi = peak_ghi * np.clip(np.sin(np.pi * (hour - 6.0) / 12.0), 0.0, None)
    temp = 15.0 + 8.0 * np.sin(np.pi * (hour - 9.0) / 12.0)
    return IrradianceSeries(start, 1800.0, np.round(ghi, 6), np.round(temp, 6))


def write_toy_dataset(
    out_dir,
    *,
    days: float = 3.0,
    period: float = 6.0,
    residual_mean: float = 60.0,
    residual_sigma: float = 5.0,
    p_rated: float = 300.0,
    seed: int = 0,
    split: dict | None = None,
    label_injection: bool = False,
) -> Path:
    """Write channel CSVs, irradiance CSV and ``manifest.yaml``; return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(round(days * DAY / period))
    t = TOY_START + np.arange(n) * period
    rng = np.random.default_rng(seed)

    apps = []
    for w in TOY_APPLIANCES:
        write_channel(out / f"{w.name}.csv", PowerSeries(TOY_START, period, square_wave(t, w), channel_id=w.name))
        apps.append({"name": w.name, "path": f"{w.name}.csv", "threshold": w.threshold,
                     "power_factor": w.power_factor})
    residual = np.round(np.maximum(0.0, residual_mean + residual_sigma * rng.standard_normal(n)), 3)
    write_channel(out / "residual.csv", PowerSeries(TOY_START, period, residual, channel_id="residual"))
    write_irradiance_csv(out / "irradiance.csv", toy_irradiance(days))

    injection = {"irradiance": "irradiance.csv", "p_rated": p_rated, "power_factor": 0.98}
    if label_injection:
        injection["label"] = {"name": "pv", "threshold": 0.0}
    manifest = {
        "name": "toy",
        "timezone": "UTC",
        "grid": {"period": period, "length": n},
        "appliances": apps,
        "residual": {"path": "residual.csv", "power_factor": 0.95},
        "injection": injection,
        "split": split or {"mode": "chronological", "test_days": 1},
    }
    path = out / "manifest.yaml"
    path.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return path

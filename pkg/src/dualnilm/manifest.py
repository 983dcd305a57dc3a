"""Household manifests: YAML files naming channels, specs and the PV setup.

Example::

    name: house1
    timezone: UTC            # applied to naive timestamps in channel files
    grid: {period: 6}        # optional start (ISO-8601) and length
    appliances:
      - {name: fridge, path: fridge.csv, threshold: 50, power_factor: 0.85}
    residual: {path: other.csv, power_factor: 0.95}     # optional, never labelled
    injection:
      irradiance: irradiance.csv
      p_rated: 120
      power_factor: 0.98
      label: {name: micro-inverter, threshold: 0}       # optional state head
    split: {mode: chronological, test_days: 1}

Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .pipeline import DataError, SplitMode, load_channel, parse_timestamp, resample_align, synthesize_household
from .pvsim import PvConfig, read_irradiance_csv, simulate_profile
from .types import ApplianceSpec, AugmentedHousehold


@dataclass(frozen=True)
class ChannelEntry:
    spec: ApplianceSpec
    path: Path


@dataclass(frozen=True)
class Manifest:
    path: Path
    name: str
    timezone: str
    appliances: tuple[ChannelEntry, ...]
    pv: PvConfig
    irradiance: Path | None
    residual: Path | None = None
    residual_pf: float = 1.0
    injection_label: ApplianceSpec | None = None
    period: float | None = None
    start: float | None = None
    length: int | None = None
    split: SplitMode = field(default_factory=SplitMode)
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def input_files(self) -> list[Path]:
        files = [self.path] + [a.path for a in self.appliances]
        files += [p for p in (self.residual, self.irradiance) if p is not None]
        return files


def _time(value) -> float:
    if isinstance(value, datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=timezone.utc)
        return value.timestamp()
    return parse_timestamp(str(value))


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: expected a mapping at top level")
    base = path.parent

    def resolve(p):
        return None if p is None else (base / p)

    try:
        apps = tuple(
            ChannelEntry(
                ApplianceSpec(a["name"], float(a["threshold"]), float(a.get("power_factor", 1.0))),
                resolve(a["path"]),
            )
            for a in raw["appliances"]
        )
        inj = raw.get("injection", {})
        pv = PvConfig(
            p_rated=float(inj["p_rated"]),
            t_noct=float(inj.get("t_noct", 45.0)),
            gamma=float(inj.get("gamma", -0.005)),
            eta_inv=float(inj.get("eta_inv", 0.96)),
            power_factor=float(inj.get("power_factor", 0.98)),
        )
        label = inj.get("label")
        grid = raw.get("grid", {})
        residual = raw.get("residual") or {}
        split = raw.get("split", {})
        return Manifest(
            path=path,
            name=str(raw.get("name", path.stem)),
            timezone=str(raw.get("timezone", "UTC")),
            appliances=apps,
            pv=pv,
            irradiance=resolve(inj.get("irradiance")),
            residual=resolve(residual.get("path")),
            residual_pf=float(residual.get("power_factor", 1.0)),
            injection_label=None if label is None else ApplianceSpec(
                label.get("name", "injection"), float(label.get("threshold", 0.0)),
                pv.power_factor, is_injection=True),
            period=None if "period" not in grid else float(grid["period"]),
            start=None if "start" not in grid else _time(grid["start"]),
            length=None if "length" not in grid else int(grid["length"]),
            split=SplitMode(split.get("mode", "chronological"), float(split.get("test_days", 1.0))),
            raw=raw,
        )
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc!r})") from None


def build_household(m: Manifest, *, irradiance_path=None, pv: PvConfig | None = None) -> AugmentedHousehold:
    """Load every channel, align to a common grid and apply PV injection.

    The default grid spans the overlap of all channels at the first
    appliance's native period.
    """
    series = [load_channel(a.path, m.timezone, a.spec.name) for a in m.appliances]
    residual = load_channel(m.residual, m.timezone, "residual") if m.residual else None
    members = series + ([residual] if residual is not None else [])

    period = m.period or series[0].period
    start = m.start if m.start is not None else max(s.start_time for s in members)
    end = min(s.end_time for s in members)
    length = m.length or int(math.floor((end - start) / period + 1e-9))
    if length < 1:
        raise DataError("channels do not overlap")
    grid = (start, period, length)

    aligned = [resample_align(s, grid) for s in series]
    residual = resample_align(residual, grid) if residual is not None else None

    pv = pv or m.pv
    irr_path = irradiance_path or m.irradiance
    if irr_path is None:
        raise DataError("no irradiance file given")
    if not Path(irr_path).exists():
        raise DataError(f"irradiance file not found: {irr_path}")
    try:
        irr = read_irradiance_csv(irr_path)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    profile = simulate_profile(irr, pv, grid)
    return synthesize_household(
        aligned, [a.spec for a in m.appliances], profile,
        residual=residual, residual_pf=m.residual_pf,
        injection_spec=m.injection_label, name=m.name,
    )

import numpy as np
import pytest
import torch

from dualnilm.pipeline import synthesize_household
from dualnilm.types import ApplianceSpec, InjectionProfile, PowerSeries

T0 = 1_700_006_400.0  # 2023-11-15 00:00 UTC


def series(values, period=6.0, start=T0, reactive=None, cid=""):
    return PowerSeries(start, period, np.asarray(values, dtype=float), reactive, cid)


def household(apps, pv, *, rated=None, specs=None, period=6.0, start=T0, residual=None, **kw):
    """Household from raw appliance watt arrays and a PV watt array."""
    apps = [np.asarray(a, dtype=float) for a in apps]
    specs = specs or [ApplianceSpec(f"app{i}", 10.0, 0.9) for i in range(len(apps))]
    pv = np.asarray(pv, dtype=float)
    rated = rated or max(float(pv.max()), 1.0)
    inj = InjectionProfile(series(pv, period, start, cid="pv"), rated)
    res = None if residual is None else series(residual, period, start, cid="residual")
    return synthesize_household([series(a, period, start, cid=s.name) for a, s in zip(apps, specs)],
                                specs, inj, residual=res, **kw)


def square(n, on, cycle, duty, phase=0):
    k = (np.arange(n) + phase) % cycle
    return np.where(k < duty * cycle, float(on), 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)

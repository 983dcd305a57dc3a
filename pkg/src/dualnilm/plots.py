"""Static figures: appliance state rasters and injection overlays."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def state_raster(path, truth, pred, names) -> None:
    """One row pair per appliance: ground truth above, prediction below."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    K = truth.shape[1]
    rows = np.empty((2 * K, truth.shape[0]))
    rows[0::2] = truth.T
    rows[1::2] = pred.T
    fig, ax = plt.subplots(figsize=(10, 0.6 * 2 * K + 1))
    ax.imshow(rows, aspect="auto", interpolation="nearest", cmap="Greys", vmin=0, vmax=1)
    ax.set_yticks(range(2 * K))
    ax.set_yticklabels([f"{n} {tag}" for n in names for tag in ("true", "pred")])
    ax.set_xlabel("window")
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def injection_overlay(path, truth, pred, rated_capacity: float) -> None:
    """Window-averaged injection in watts, truth against estimate."""
    truth = np.asarray(truth).mean(axis=1) * rated_capacity
    pred = np.asarray(pred).mean(axis=1) * rated_capacity
    fig, ax = plt.subplots(figsize=(10, 3))
    ax.plot(truth, label="true", lw=1.2)
    ax.plot(pred, label="estimate", lw=1.0, ls="--")
    ax.set_xlabel("window")
    ax.set_ylabel("injection (W)")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)

"""Mini-batch Adam training, batched inference and checkpoints."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from . import storage
from .losses import LossBreakdown, total_loss
from .pipeline import WindowSet

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    kind: str = "L2"

    @classmethod
    def of(cls, model) -> LossConfig:
        cfg = getattr(model, "config", None)
        if cfg is None or not hasattr(cfg, "lambda1"):
            return cls()
        return cls(cfg.lambda1, cfg.lambda2, cfg.injection_loss)


@dataclass
class TrainingTrace:
    initial: dict = field(default_factory=dict)
    epochs: list[dict] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [e["total"] for e in self.epochs]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "total", "dice", "injection"])
            for e in self.epochs:
                w.writerow([e["epoch"], repr(e["total"]), repr(e["dice"]), repr(e["injection"])])

    @classmethod
    def read_csv(cls, path) -> TrainingTrace:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(epochs=[{"epoch": int(r["epoch"]), "total": float(r["total"]),
                            "dice": float(r["dice"]), "injection": float(r["injection"])} for r in rows])


def model_dtype(model) -> torch.dtype:
    return next(model.parameters()).dtype


def _tensors(ws: WindowSet, dtype):
    return (torch.as_tensor(ws.inputs, dtype=dtype),
            torch.as_tensor(ws.states, dtype=dtype),
            torch.as_tensor(ws.injection, dtype=dtype))


def evaluate_loss(model, ws: WindowSet, loss_cfg: LossConfig | None = None, batch_size: int = 256) -> dict:
    """Eval-mode losses averaged over windows."""
    loss_cfg = loss_cfg or LossConfig.of(model)
    x, s, y = _tensors(ws, model_dtype(model))
    was_training = model.training
    model.eval()
    sums = np.zeros(3)
    with torch.no_grad():
        for i in range(0, len(ws), batch_size):
            sl = slice(i, i + batch_size)
            parts = total_loss(model(x[sl]), s[sl], y[sl], lambda1=loss_cfg.lambda1,
                               lambda2=loss_cfg.lambda2, kind=loss_cfg.kind)
            sums += np.array([float(v) for v in parts]) * x[sl].shape[0]
    model.train(was_training)
    sums /= max(len(ws), 1)
    return {"total": float(sums[0]), "dice": float(sums[1]), "injection": float(sums[2])}


def fit(model, windows: WindowSet, opt: OptimizerConfig = OptimizerConfig(), *,
        loss_cfg: LossConfig | None = None, parameters=None, on_epoch=None) -> TrainingTrace:
    """Train in place with Adam; returns per-epoch mean losses.

    ``parameters`` restricts the update to a subset (e.g. a newly added
    head). Raises :class:`TrainingDivergence` as soon as a loss or a
    parameter stops being finite.
    """
    if len(windows) == 0:
        raise ValueError("empty training set")
    loss_cfg = loss_cfg or LossConfig.of(model)
    params = list(parameters) if parameters is not None else list(model.parameters())
    torch.manual_seed(opt.seed)
    gen = torch.Generator().manual_seed(opt.seed)
    optim = torch.optim.Adam(params, lr=opt.lr)
    x, s, y = _tensors(windows, model_dtype(model))
    n = len(windows)

    trace = TrainingTrace(initial=evaluate_loss(model, windows, loss_cfg))
    model.train()
    for epoch in range(1, opt.epochs + 1):
        order = torch.randperm(n, generator=gen) if opt.shuffle else torch.arange(n)
        sums = np.zeros(3)
        for i in range(0, n, opt.batch_size):
            idx = order[i:i + opt.batch_size]
            parts: LossBreakdown = total_loss(model(x[idx]), s[idx], y[idx], lambda1=loss_cfg.lambda1,
                                              lambda2=loss_cfg.lambda2, kind=loss_cfg.kind)
            if not torch.isfinite(parts.total):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
            optim.zero_grad(set_to_none=True)
            parts.total.backward()
            optim.step()
            if not all(torch.isfinite(p).all() for p in params):
                raise TrainingDivergence(f"non-finite parameters at epoch {epoch}")
            sums += np.array([float(v.detach()) for v in parts]) * idx.numel()
        sums /= n
        row = {"epoch": epoch, "total": float(sums[0]), "dice": float(sums[1]), "injection": float(sums[2])}
        trace.epochs.append(row)
        log.info("epoch %d total=%.5f dice=%.5f injection=%.5f", epoch, *sums)
        if on_epoch is not None:
            on_epoch(row)
    model.eval()
    return trace


def predict(model, ws_or_inputs, batch_size: int = 256):
    """Eval-mode predictions as numpy: ``(state_probs[N,K] | None, injection[N,T] | None)``."""
    inputs = ws_or_inputs.inputs if isinstance(ws_or_inputs, WindowSet) else ws_or_inputs
    x = torch.as_tensor(np.asarray(inputs), dtype=model_dtype(model))
    model.eval()
    states, inj = [], []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            out = model(x[i:i + batch_size])
            if out.state_probs is not None:
                states.append(out.state_probs.double().numpy())
            if out.injection is not None:
                inj.append(out.injection.double().numpy())
    return (np.concatenate(states) if states else None,
            np.concatenate(inj) if inj else None)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, meta: dict | None = None) -> None:
    """Write ``DNILM-CKPT-1``: arch, config, appliance registry and parameter blobs."""
    dtype = model_dtype(model)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    header = {
        "format": storage.CHECKPOINT_MAGIC.decode(),
        "arch": model.arch,
        "config": model.config.to_dict(),
        "appliances": list(model.appliances),
        "float_bits": 64 if dtype == torch.float64 else 32,
        "extra": meta or {},
    }
    storage.write_container(path, "checkpoint", header, arrays, magic=storage.CHECKPOINT_MAGIC)


def load_checkpoint(path):
    """Return ``(model, extra_meta)``; the model is rebuilt from its stored config."""
    from .registry import build_model

    _, header, arrays = storage.read_container(path, magic=storage.CHECKPOINT_MAGIC, kind="checkpoint")
    model = build_model(header["arch"], header["config"])
    if header["float_bits"] == 64:
        model = model.double()
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, header["extra"]

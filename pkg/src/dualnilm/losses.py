"""Training objective: soft Dice over appliance states plus an L1/L2 injection term."""
from __future__ import annotations

from typing import NamedTuple

import torch

DICE_EPS = 1.0


class LossBreakdown(NamedTuple):
    total: torch.Tensor
    dice: torch.Tensor
    injection: torch.Tensor


def dice_loss(pred, truth, eps: float = DICE_EPS):
    """Soft Dice summed over appliances, reduced over the batch axis.

    ``pred`` and ``truth`` are ``B x K``. Each appliance contributes
    ``1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)``. With ``eps=0`` an
    appliance absent from both prediction and truth contributes 0.
    """
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(truth.shape)}")
    truth = truth.to(pred.dtype)
    inter = (pred * truth).sum(dim=0)
    denom = pred.sum(dim=0) + truth.sum(dim=0)
    if eps == 0:
        safe = torch.where(denom > 0, denom, torch.ones_like(denom))
        term = torch.where(denom > 0, 1.0 - 2.0 * inter / safe, torch.zeros_like(denom))
    else:
        term = 1.0 - (2.0 * inter + eps) / (denom + eps)
    return term.sum()


def injection_loss(pred, truth, kind: str = "L2"):
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(truth.shape)}")
    err = pred - truth.to(pred.dtype)
    if kind == "L1":
        return err.abs().mean()
    if kind == "L2":
        return (err * err).mean()
    raise ValueError(f"unknown injection loss {kind!r}")


def total_loss(out, state_labels, injection_target, *, lambda1: float = 1.0, lambda2: float = 1.0,
               kind: str = "L2", eps: float = DICE_EPS) -> LossBreakdown:
    """Weighted sum of the two task losses; a missing head contributes zero."""
    ref = out.state_probs if out.state_probs is not None else out.injection
    zero = ref.new_zeros(())
    dice = dice_loss(out.state_probs, state_labels, eps) if out.state_probs is not None else zero
    inj = injection_loss(out.injection, injection_target, kind) if out.injection is not None else zero
    return LossBreakdown(lambda1 * dice + lambda2 * inj, dice, inj)

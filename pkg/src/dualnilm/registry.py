"""Model construction by architecture name (used by checkpoints and the runner)."""
from __future__ import annotations

import torch

from .baselines.neural import PRESETS, BaselineConfig, UnknownPresetError, build_neural_baseline
from .model import DualNILM, ModelConfig

NEURAL_MODELS = ("dualnilm",) + tuple(PRESETS)
ALL_MODELS = NEURAL_MODELS + ("fhmm",)


def build_model(arch: str, config, seed: int | None = None):
    """Instantiate ``arch`` from a config object or its dict form."""
    if seed is not None:
        torch.manual_seed(seed)
    if arch == "dualnilm":
        cfg = config if isinstance(config, ModelConfig) else ModelConfig.from_dict(config)
        return DualNILM(cfg)
    if arch in PRESETS:
        cfg = config if isinstance(config, BaselineConfig) else BaselineConfig.from_dict(config)
        return build_neural_baseline(cfg)
    raise UnknownPresetError(f"unknown model {arch!r}; choose from {ALL_MODELS}")

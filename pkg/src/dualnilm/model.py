"""Dual-task network: per-feature CNN encoders, a transformer encoder, a
seq2point state head per appliance and a seq2seq injection decoder."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .types import ApplianceSpec


class NonFiniteInputError(ValueError):
    pass


class ModelOutput(NamedTuple):
    state_probs: torch.Tensor | None  # B x K
    injection: torch.Tensor | None    # B x T, normalized to rated capacity


@dataclass(frozen=True)
class ModelConfig:
    T: int = 300
    F: int = 2
    conv_layers: int = 3
    conv_filters: int = 64
    kernel: int = 5
    padding: int = 2
    heads: int = 8
    ff_dim: int = 128
    encoder_layers: int = 1
    decoder_layers: int = 1
    head_hidden: int = 256
    dropout: float = 0.2
    # residual-branch dropout inside transformer blocks; attention weights are never dropped
    transformer_dropout: float = 0.0
    appliances: tuple[str, ...] = ("appliance",)
    lambda1: float = 1.0
    lambda2: float = 1.0
    injection_loss: str = "L2"
    positional_encoding: bool = False
    # fixed divisor applied to raw W/var inputs inside the network
    input_scale: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "appliances", tuple(self.appliances))
        if self.heads < 1 or self.d_model % self.heads:
            raise ValueError(f"heads={self.heads} must divide d_model={self.d_model}")
        if not self.appliances:
            raise ValueError("at least one appliance head is required")
        if len(set(self.appliances)) != len(self.appliances):
            raise ValueError("appliance names must be unique")
        if not 0 <= self.dropout < 1 or not 0 <= self.transformer_dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.injection_loss not in ("L1", "L2"):
            raise ValueError("injection_loss must be 'L1' or 'L2'")

    @property
    def d_model(self) -> int:
        return self.F * self.conv_filters

    @property
    def K(self) -> int:
        return len(self.appliances)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["appliances"] = list(self.appliances)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


def init_affine(module: nn.Module) -> None:
    """Uniform fan-in init (weights and biases) for every Linear/Conv1d inside.

    Non-zero conv biases matter: with zero biases, LayerNorm(ReLU(w x)) over
    channels is blind to the input level.
    """
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.uniform_(m.bias, -bound, bound)


def sinusoidal_encoding(T: int, D: int) -> torch.Tensor:
    pos = torch.arange(T, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, D, 2, dtype=torch.float64) * (-math.log(10000.0) / D))
    pe = torch.zeros(T, D, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : D // 2]
    return pe


class CNNEncoder(nn.Module):
    """Conv1d -> ReLU -> LayerNorm(channels), repeated; length preserving."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        C = cfg.conv_filters
        self.convs = nn.ModuleList(
            nn.Conv1d(1 if i == 0 else C, C, cfg.kernel, padding=cfg.padding)
            for i in range(cfg.conv_layers)
        )
        self.norms = nn.ModuleList(nn.LayerNorm(C, eps=1e-5) for _ in range(cfg.conv_layers))

    def forward(self, x):  # B x T -> B x T x C
        h = x.unsqueeze(1)
        for conv, norm in zip(self.convs, self.norms):
            h = norm(F.relu(conv(h)).transpose(1, 2)).transpose(1, 2)
        return h.transpose(1, 2)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def _split(self, x):
        B, T, D = x.shape
        return x.view(B, T, self.heads, D // self.heads).transpose(1, 2)

    def forward(self, query, memory):
        q, k, v = self._split(self.q(query)), self._split(self.k(memory)), self._split(self.v(memory))
        if q.shape[0] != k.shape[0]:
            q = q.expand(k.shape[0], -1, -1, -1)
        att = F.scaled_dot_product_attention(q, k, v)
        B, H, T, d = att.shape
        return self.out(att.transpose(1, 2).reshape(B, T, H * d))


class FeedForward(nn.Sequential):
    def __init__(self, d_model: int, ff_dim: int, dropout: float):
        super().__init__(nn.Linear(d_model, ff_dim), nn.ReLU(), nn.Dropout(dropout), nn.Linear(ff_dim, d_model))


class EncoderLayer(nn.Module):
    """Post-norm self-attention block."""

    def __init__(self, d_model: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, heads)
        self.ff = FeedForward(d_model, ff_dim, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        x = self.norm1(x + self.drop(self.attn(x, x)))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderLayer(nn.Module):
    """Post-norm self-attention, cross-attention and feed-forward block.

    ``x`` may have batch size 1 (shared learned queries); it is broadcast
    against ``memory`` after the self-attention step.
    """

    def __init__(self, d_model: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, heads)
        self.cross_attn = MultiHeadAttention(d_model, heads)
        self.ff = FeedForward(d_model, ff_dim, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory):
        x = self.norm1(x + self.drop(self.self_attn(x, x)))
        x = x.expand(memory.shape[0], -1, -1)
        x = self.norm2(x + self.drop(self.cross_attn(x, memory)))
        return self.norm3(x + self.drop(self.ff(x)))


class DualNILM(nn.Module):
    arch = "dualnilm"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        D = cfg.d_model
        self.cnn = nn.ModuleList(CNNEncoder(cfg) for _ in range(cfg.F))
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(D, cfg.heads, cfg.ff_dim, cfg.transformer_dropout) for _ in range(cfg.encoder_layers)
        )
        self.encoder_norm = nn.LayerNorm(D)
        self.queries = nn.Parameter(torch.empty(cfg.T, D))
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(D, cfg.heads, cfg.ff_dim, cfg.transformer_dropout) for _ in range(cfg.decoder_layers)
        )
        self.injection_head = nn.Sequential(
            nn.Linear(D, cfg.head_hidden), nn.ReLU(), nn.Dropout(cfg.dropout), nn.Linear(cfg.head_hidden, 1)
        )
        self.state_heads = nn.ModuleList(nn.Linear(D, 1) for _ in cfg.appliances)
        if cfg.positional_encoding:
            self.register_buffer("pos", sinusoidal_encoding(cfg.T, D).float(), persistent=False)
        else:
            self.pos = None
        init_affine(self)
        nn.init.normal_(self.queries)

    @property
    def appliances(self) -> tuple[str, ...]:
        return self.config.appliances

    def _check(self, x):
        if x.dim() != 3 or x.shape[1] != self.config.T or x.shape[2] != self.config.F:
            raise ValueError(f"expected B x {self.config.T} x {self.config.F} input, got {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise NonFiniteInputError("input contains NaN or infinite values")

    def cnn_encode(self, x_f, f: int):
        """Encode one feature channel ``x_f`` (B x T, already scaled) to B x T x C."""
        if x_f.shape[-1] != self.config.T:
            raise ValueError(f"expected length {self.config.T}, got {x_f.shape[-1]}")
        return self.cnn[f](x_f)

    def encode(self, H):
        if H.shape[-1] != self.config.d_model:
            raise ValueError(f"expected width {self.config.d_model}, got {H.shape[-1]}")
        z = H if self.pos is None else H + self.pos.to(H.dtype)
        for layer in self.encoder_layers:
            z = layer(z)
        return self.encoder_norm(z)

    def predict_states(self, Z):
        last = Z[:, -1]
        return torch.cat([torch.sigmoid(head(last)) for head in self.state_heads], dim=-1)

    def predict_injection(self, Z):
        x = self.queries.unsqueeze(0)
        for layer in self.decoder_layers:
            x = layer(x, Z)
        if x.shape[0] != Z.shape[0]:  # no decoder layers
            x = x.expand(Z.shape[0], -1, -1)
        return torch.sigmoid(self.injection_head(x)).squeeze(-1)

    def forward(self, x) -> ModelOutput:
        self._check(x)
        B = x.shape[0]
        if B == 0:
            return ModelOutput(x.new_zeros(0, self.config.K), x.new_zeros(0, self.config.T))
        x = x / self.config.input_scale
        H = torch.cat([self.cnn_encode(x[:, :, f], f) for f in range(self.config.F)], dim=-1)
        Z = self.encode(H)
        return ModelOutput(self.predict_states(Z), self.predict_injection(Z))

    def head_parameters(self, names):
        idx = [self.appliances.index(n) for n in names]
        return [p for i in idx for p in self.state_heads[i].parameters()]


class DuplicateApplianceError(ValueError):
    pass


def add_appliance_head(model: DualNILM, spec: ApplianceSpec | str, *, zero_init: bool = False,
                       generator: torch.Generator | None = None) -> DualNILM:
    """Append a fresh state head in place; nothing else in the model changes."""
    name = spec.name if isinstance(spec, ApplianceSpec) else str(spec)
    if name in model.appliances:
        raise DuplicateApplianceError(f"appliance {name!r} already has a head")
    ref = model.state_heads[0].weight if len(model.state_heads) else next(model.parameters())
    head = nn.Linear(model.config.d_model, 1).to(dtype=ref.dtype, device=ref.device)
    with torch.no_grad():
        if zero_init:
            head.weight.zero_()
        else:
            bound = 1.0 / math.sqrt(model.config.d_model)
            head.weight.copy_(torch.empty_like(head.weight).uniform_(-bound, bound, generator=generator))
        head.bias.zero_()
    model.state_heads.append(head)
    model.config = replace(model.config, appliances=model.appliances + (name,))
    return model

"""Neural reference models with the same forward contract as DualNILM.

Every model maps ``B x T x F`` raw inputs to a :class:`ModelOutput`;
state recognizers fill ``state_probs``, disaggregators fill ``injection``,
UNet fills both.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType

import torch
import torch.nn.functional as F
from torch import nn

from ..model import EncoderLayer, ModelOutput, NonFiniteInputError, init_affine, sinusoidal_encoding

PRESETS = MappingProxyType({
    "seq2point": MappingProxyType({"filters": (30, 30, 40, 50, 50), "kernels": (10, 8, 6, 5, 5),
                                   "dense": 1024, "dropout": 0.2}),
    "cnn_lstm": MappingProxyType({"filters": (64, 64), "kernel": 3, "padding": 1, "hidden": 128}),
    "transformer": MappingProxyType({"d_model": 128, "layers": 2, "heads": 4, "ff_dim": 256,
                                     "dropout": 0.1}),
    "seq2seq": MappingProxyType({"hidden": 64, "layers": 2}),
    "dae": MappingProxyType({"sizes": (128, 64)}),
    "unet": MappingProxyType({"filters": (16, 32, 64, 128), "pad_to": 304}),
})

STATE_MODELS = ("seq2point", "cnn_lstm", "transformer", "unet")
INJECTION_MODELS = ("seq2seq", "dae", "unet")


class UnknownPresetError(KeyError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    name: str
    appliances: tuple[str, ...] = ("appliance",)
    T: int = 300
    F: int = 2
    input_scale: float = 1000.0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in PRESETS:
            raise UnknownPresetError(f"unknown baseline {self.name!r}; choose from {sorted(PRESETS)}")
        object.__setattr__(self, "appliances", tuple(self.appliances))
        bad = set(self.overrides) - set(PRESETS[self.name])
        if bad:
            raise ValueError(f"{self.name}: unknown hyperparameters {sorted(bad)}")

    @property
    def K(self) -> int:
        return len(self.appliances)

    @property
    def params(self) -> dict:
        return {**PRESETS[self.name], **self.overrides}

    def to_dict(self) -> dict:
        over = {k: list(v) if isinstance(v, tuple) else v for k, v in self.overrides.items()}
        return {"name": self.name, "appliances": list(self.appliances), "T": self.T, "F": self.F,
                "input_scale": self.input_scale, "overrides": over}

    @classmethod
    def from_dict(cls, d: dict) -> BaselineConfig:
        over = {k: tuple(v) if isinstance(v, list) else v for k, v in d.get("overrides", {}).items()}
        return cls(d["name"], tuple(d["appliances"]), d["T"], d["F"], d["input_scale"], over)


class _Baseline(nn.Module):
    def __init__(self, cfg: BaselineConfig):
        super().__init__()
        self.config = cfg
        self.arch = cfg.name

    @property
    def appliances(self):
        return self.config.appliances

    def forward(self, x) -> ModelOutput:
        cfg = self.config
        if x.dim() != 3 or x.shape[1] != cfg.T or x.shape[2] != cfg.F:
            raise ValueError(f"expected B x {cfg.T} x {cfg.F} input, got {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise NonFiniteInputError("input contains NaN or infinite values")
        return self._forward(x / cfg.input_scale)


class Seq2Point(_Baseline):
    def __init__(self, cfg):
        super().__init__(cfg)
        p = cfg.params
        chans = (cfg.F,) + tuple(p["filters"])
        self.convs = nn.ModuleList(
            nn.Conv1d(chans[i], chans[i + 1], k, padding="same") for i, k in enumerate(p["kernels"])
        )
        self.dense = nn.Linear(chans[-1] * cfg.T, p["dense"])
        self.drop = nn.Dropout(p["dropout"])
        self.out = nn.Linear(p["dense"], cfg.K)

    def _forward(self, x):
        h = x.transpose(1, 2)
        for conv in self.convs:
            h = F.relu(conv(h))
        h = self.drop(F.relu(self.dense(h.flatten(1))))
        return ModelOutput(torch.sigmoid(self.out(h)), None)


class CnnLstm(_Baseline):
    def __init__(self, cfg):
        super().__init__(cfg)
        p = cfg.params
        chans = (cfg.F,) + tuple(p["filters"])
        self.convs = nn.ModuleList(
            nn.Conv1d(chans[i], chans[i + 1], p["kernel"], padding=p["padding"]) for i in range(len(chans) - 1)
        )
        self.lstm = nn.LSTM(chans[-1], p["hidden"], batch_first=True)
        self.out = nn.Linear(p["hidden"], cfg.K)

    def _forward(self, x):
        h = x.transpose(1, 2)
        for conv in self.convs:
            h = F.max_pool1d(F.relu(conv(h)), 2)
        seq, _ = self.lstm(h.transpose(1, 2))
        return ModelOutput(torch.sigmoid(self.out(seq[:, -1])), None)


class TransformerClassifier(_Baseline):
    def __init__(self, cfg):
        super().__init__(cfg)
        p = cfg.params
        self.embed = nn.Linear(cfg.F, p["d_model"])
        self.register_buffer("pos", sinusoidal_encoding(cfg.T, p["d_model"]).float(), persistent=False)
        self.layers = nn.ModuleList(
            EncoderLayer(p["d_model"], p["heads"], p["ff_dim"], p["dropout"]) for _ in range(p["layers"])
        )
        self.drop = nn.Dropout(p["dropout"])
        self.out = nn.Linear(p["d_model"], cfg.K)

    def _forward(self, x):
        h = self.drop(self.embed(x) + self.pos.to(x.dtype))
        for layer in self.layers:
            h = layer(h)
        return ModelOutput(torch.sigmoid(self.out(h[:, -1])), None)


class Seq2Seq(_Baseline):
    """Encoder LSTM hands its final state to a decoder LSTM reading the encoder outputs."""

    def __init__(self, cfg):
        super().__init__(cfg)
        p = cfg.params
        self.encoder = nn.LSTM(cfg.F, p["hidden"], p["layers"], batch_first=True)
        self.decoder = nn.LSTM(p["hidden"], p["hidden"], p["layers"], batch_first=True)
        self.out = nn.Linear(p["hidden"], 1)

    def _forward(self, x):
        enc, state = self.encoder(x)
        dec, _ = self.decoder(enc, state)
        return ModelOutput(None, self.out(dec).squeeze(-1))


class DenoisingAutoencoder(_Baseline):
    """Fully connected autoencoder over the active-power channel."""

    def __init__(self, cfg):
        super().__init__(cfg)
        a, b = cfg.params["sizes"]
        self.net = nn.Sequential(
            nn.Linear(cfg.T, a), nn.ReLU(), nn.Linear(a, b), nn.ReLU(),
            nn.Linear(b, a), nn.ReLU(), nn.Linear(a, cfg.T),
        )

    def _forward(self, x):
        return ModelOutput(None, self.net(x[:, :, 0]))


class UNetNILM(_Baseline):
    """Four conv+pool stages with skip connections.

    The input is zero-padded to ``pad_to`` (304 for T=300, so four halvings
    stay integral). Skips are the pooled stage outputs, which puts each
    transposed convolution exactly on its partner's resolution; a final
    transposed convolution restores full length before cropping to ``T``.
    """

    def __init__(self, cfg):
        super().__init__(cfg)
        p = cfg.params
        f1, f2, f3, f4 = p["filters"]
        if p["pad_to"] < cfg.T or p["pad_to"] % 16:
            raise ValueError("pad_to must be >= T and divisible by 16")
        self.enc = nn.ModuleList([
            nn.Conv1d(cfg.F, f1, 3, padding=1), nn.Conv1d(f1, f2, 3, padding=1),
            nn.Conv1d(f2, f3, 3, padding=1), nn.Conv1d(f3, f4, 3, padding=1),
        ])
        self.up = nn.ModuleList([
            nn.ConvTranspose1d(f4, f3, 2, stride=2), nn.ConvTranspose1d(f3, f2, 2, stride=2),
            nn.ConvTranspose1d(f2, f1, 2, stride=2),
        ])
        self.dec = nn.ModuleList([
            nn.Conv1d(2 * f3, f3, 3, padding=1), nn.Conv1d(2 * f2, f2, 3, padding=1),
            nn.Conv1d(2 * f1, f1, 3, padding=1),
        ])
        self.final_up = nn.ConvTranspose1d(f1, f1, 2, stride=2)
        self.cls = nn.Conv1d(f1, cfg.K, 1)
        self.reg = nn.Conv1d(f1, 1, 1)

    def _forward(self, x):
        T = self.config.T
        h = F.pad(x.transpose(1, 2), (0, self.config.params["pad_to"] - T))
        skips = []
        for conv in self.enc[:3]:
            h = F.max_pool1d(F.relu(conv(h)), 2)
            skips.append(h)
        h = F.max_pool1d(F.relu(self.enc[3](h)), 2)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            h = F.relu(dec(torch.cat([up(h), skip], dim=1)))
        h = F.relu(self.final_up(h))[:, :, :T]
        states = torch.sigmoid(self.cls(h)[:, :, -1])
        return ModelOutput(states, self.reg(h).squeeze(1))


_CLASSES = {
    "seq2point": Seq2Point,
    "cnn_lstm": CnnLstm,
    "transformer": TransformerClassifier,
    "seq2seq": Seq2Seq,
    "dae": DenoisingAutoencoder,
    "unet": UNetNILM,
}


def build_neural_baseline(cfg: BaselineConfig, seed: int | None = None) -> nn.Module:
    if seed is not None:
        torch.manual_seed(seed)
    model = _CLASSES[cfg.name](cfg)
    init_affine(model)
    return model

import pytest
import torch

from dualnilm.baselines.neural import (INJECTION_MODELS, PRESETS, STATE_MODELS, BaselineConfig,
                                       UnknownPresetError, build_neural_baseline)
from dualnilm.model import NonFiniteInputError
from dualnilm.registry import build_model

from fdcheck import loss_fn, max_relative_error

TINY = {
    "seq2point": {"filters": (3, 3), "kernels": (3, 3), "dense": 4, "dropout": 0.0},
    "cnn_lstm": {"filters": (3,), "hidden": 3},
    "transformer": {"d_model": 4, "layers": 1, "heads": 2, "ff_dim": 6, "dropout": 0.0},
    "seq2seq": {"hidden": 3, "layers": 1},
    "dae": {"sizes": (5, 4)},
    "unet": {"filters": (2, 2, 2, 2), "pad_to": 16},
}


def tiny(name, T=8, K=2):
    cfg = BaselineConfig(name, tuple(f"a{k}" for k in range(K)), T=T, overrides=TINY[name])
    return build_neural_baseline(cfg, seed=1).double().eval()


def raw(B, T, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(B, T, 2, generator=g, dtype=torch.float64) * 2000


class TestPresets:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_default_shapes(self, name):
        m = build_neural_baseline(BaselineConfig(name, ("a", "b", "c")), seed=0).eval()
        with torch.no_grad():
            out = m(torch.rand(2, 300, 2) * 3000)
        if name in STATE_MODELS:
            assert out.state_probs.shape == (2, 3)
            assert torch.all((out.state_probs > 0) & (out.state_probs < 1))
        else:
            assert out.state_probs is None
        if name in INJECTION_MODELS:
            assert out.injection.shape == (2, 300)
        else:
            assert out.injection is None

    def test_unknown_preset(self):
        with pytest.raises(UnknownPresetError):
            BaselineConfig("xgboost")
        with pytest.raises(UnknownPresetError):
            build_model("nope", {})

    def test_unknown_override(self):
        with pytest.raises(ValueError):
            BaselineConfig("dae", overrides={"hidden": 3})

    def test_unet_pad(self):
        with pytest.raises(ValueError):
            build_neural_baseline(BaselineConfig("unet", T=300, overrides={"pad_to": 300}))

    def test_dict_round_trip(self):
        cfg = BaselineConfig("unet", ("x",), T=8, overrides=TINY["unet"])
        assert BaselineConfig.from_dict(cfg.to_dict()) == cfg
        m = build_model("unet", cfg.to_dict(), seed=0)
        assert m.config == cfg

    def test_seeded_build_is_deterministic(self):
        a, b = tiny("seq2point"), tiny("seq2point")
        for p, q in zip(a.parameters(), b.parameters()):
            assert torch.equal(p, q)


class TestForwardContract:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_wrong_shape(self, name):
        with pytest.raises(ValueError):
            tiny(name)(torch.zeros(2, 9, 2, dtype=torch.float64))

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_nonfinite(self, name):
        x = raw(1, 8)
        x[0, 3, 0] = float("nan")
        with pytest.raises(NonFiniteInputError):
            tiny(name)(x)

    def test_dae_ignores_reactive(self):
        m = tiny("dae")
        x = raw(2, 8)
        y = x.clone()
        y[:, :, 1] = 0
        assert torch.equal(m(x).injection, m(y).injection)


class TestGradients:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_finite_differences(self, name):
        m = tiny(name)
        x = raw(2, 8, seed=3)
        s = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        y = torch.rand(2, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        worst, where = max_relative_error(m, loss_fn(m, x, s, y))
        assert worst <= 1e-4, where

import numpy as np
import pytest
import torch

from dualnilm.model import DualNILM, ModelConfig
from dualnilm.pipeline import WindowPlan, WindowSet, window_arrays
from dualnilm.storage import FormatError
from dualnilm.training import (OptimizerConfig, TrainingDivergence, TrainingTrace, evaluate_loss, fit,
                               load_checkpoint, predict, save_checkpoint)

from conftest import household, square

SMALL = dict(T=64, conv_filters=16, heads=4, ff_dim=32, head_hidden=32)


def small_windows(n_windows=32, T=64, stride=7, seed=0):
    """Strided windows; a 300 W base load keeps the PV below consumption so
    the injection target is never clipped to zero mid-window."""
    n = T + (n_windows - 1) * stride
    r = np.random.default_rng(seed)
    apps = [square(n, 200, 37, 0.4), square(n, 900, 23, 0.5, phase=5)]
    pv = 120 + 20 * np.sin(np.linspace(0, 1, n)) + r.uniform(0, 2, n)
    h = household(apps, pv, rated=200.0, residual=np.full(n, 300.0))
    return window_arrays(h, WindowPlan(T, stride))


def small_model(ws, **kw):
    return DualNILM(ModelConfig(**{**SMALL, "appliances": ws.appliance_names, **kw}))


class TestFit:
    def test_overfit(self):
        ws = small_windows()
        torch.manual_seed(0)
        m = small_model(ws, dropout=0.0)
        trace = fit(m, ws, OptimizerConfig(epochs=50, batch_size=8, lr=1e-3, seed=0))
        assert len(trace.epochs) == 50
        assert trace.totals[-1] < 0.1 * trace.initial["total"]

    def test_zero_lr_constant(self):
        ws = small_windows(16)
        m = small_model(ws, dropout=0.0)
        trace = fit(m, ws, OptimizerConfig(epochs=3, batch_size=16, lr=0.0, shuffle=False))
        assert np.allclose(trace.totals, trace.initial["total"], rtol=1e-6)

    def test_huge_lr_diverges(self):
        ws = small_windows(16)
        m = small_model(ws)
        with pytest.raises(TrainingDivergence):
            fit(m, ws, OptimizerConfig(epochs=30, batch_size=8, lr=1e6))

    def test_seeded_trace_identical(self):
        ws = small_windows(16)
        traces = []
        for _ in range(2):
            torch.manual_seed(7)
            m = small_model(ws)
            traces.append(fit(m, ws, OptimizerConfig(epochs=2, batch_size=8, seed=7)).totals)
        assert traces[0] == traces[1]

    def test_empty(self):
        ws = small_windows(4)
        empty = WindowSet(ws.inputs[:0], ws.states[:0], ws.injection[:0], ws.start_time[:0],
                          ws.appliance_names, ws.rated_capacity, ws.period)
        with pytest.raises(ValueError):
            fit(small_model(ws), empty)

    def test_parameter_subset(self):
        ws = small_windows(8)
        m = small_model(ws)
        frozen = {k: v.clone() for k, v in m.named_parameters() if not k.startswith("state_heads.1")}
        fit(m, ws, OptimizerConfig(epochs=1, batch_size=8), parameters=m.head_parameters([ws.appliance_names[1]]))
        for k, v in m.named_parameters():
            if k in frozen:
                assert torch.equal(v, frozen[k]), k

    def test_trace_csv_round_trip(self, tmp_path):
        ws = small_windows(8)
        trace = fit(small_model(ws), ws, OptimizerConfig(epochs=2, batch_size=4))
        trace.write_csv(tmp_path / "t.csv")
        back = TrainingTrace.read_csv(tmp_path / "t.csv")
        assert back.epochs == [{k: (int(v) if k == "epoch" else float(v)) for k, v in e.items()} for e in trace.epochs]


class TestPredictAndCheckpoint:
    def test_predict_shapes(self):
        ws = small_windows(10)
        probs, inj = predict(small_model(ws), ws, batch_size=4)
        assert probs.shape == (10, 2) and inj.shape == (10, 64)

    def test_eval_loss_matches_manual(self):
        ws = small_windows(6)
        m = small_model(ws).eval()
        out = evaluate_loss(m, ws)
        assert out["total"] == pytest.approx(out["dice"] + out["injection"], rel=1e-6)

    @pytest.mark.parametrize("double", [False, True])
    def test_round_trip(self, tmp_path, double):
        ws = small_windows(6)
        m = small_model(ws)
        if double:
            m = m.double()
        save_checkpoint(tmp_path / "m.ckpt", m, {"note": "x"})
        back, extra = load_checkpoint(tmp_path / "m.ckpt")
        assert extra == {"note": "x"} and back.appliances == m.appliances
        assert next(back.parameters()).dtype == (torch.float64 if double else torch.float32)
        a, _ = predict(m, ws)
        b, _ = predict(back, ws)
        assert np.array_equal(a, b)
        assert (tmp_path / "m.ckpt").read_bytes().startswith(b"DNILM-CKPT-1\n")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x").write_bytes(b"DNILM1\n" + b"\0" * 16)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "x")

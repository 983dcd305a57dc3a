import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dualnilm.losses import DICE_EPS, dice_loss, injection_loss, total_loss
from dualnilm.model import ModelOutput


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=float))


class TestDice:
    def test_perfect_match_bounded(self):
        truth = t([[1, 0], [1, 1], [0, 1], [1, 0]])
        loss = dice_loss(truth.clone(), truth)
        # per appliance n ones: 1 - (2n + eps)/(2n + eps) = 0
        assert loss.item() == pytest.approx(0.0, abs=1e-15)

    def test_complement_near_one(self):
        truth = t([[1], [0], [1], [1]])
        n = truth.sum().item()
        assert dice_loss(1 - truth, truth).item() == pytest.approx(1 - DICE_EPS / (4 + DICE_EPS))
        assert dice_loss(1 - truth, truth, eps=0).item() == 1.0
        assert n == 3

    def test_half_overlap_exact(self):
        truth = t([[1], [1], [1], [1], [0], [0], [0], [0]])
        pred = t([[1], [1], [0], [0], [1], [1], [0], [0]])
        assert dice_loss(pred, truth, eps=0).item() == 0.5

    def test_empty_appliance(self):
        z = t(np.zeros((5, 1)))
        assert dice_loss(z, z, eps=0).item() == 0.0
        assert dice_loss(z, z).item() == 0.0

    def test_sum_over_appliances(self):
        truth = t([[1, 1], [0, 0]])
        pred = t([[0, 0], [1, 1]])
        assert dice_loss(pred, truth, eps=0).item() == 2.0

    def test_shape_error(self):
        with pytest.raises(ValueError):
            dice_loss(t(np.zeros((2, 2))), t(np.zeros((2, 3))))

    @settings(max_examples=200, deadline=None)
    @given(B=st.integers(1, 16), K=st.integers(1, 5), seed=st.integers(0, 2 ** 32 - 1),
           eps=st.sampled_from([0.0, 1e-6, 1.0]))
    def test_bounds(self, B, K, seed, eps):
        r = np.random.default_rng(seed)
        loss = dice_loss(t(r.uniform(size=(B, K))), t(r.integers(0, 2, (B, K))), eps).item()
        assert 0.0 <= loss <= K + 1e-12


class TestInjectionLoss:
    def test_examples(self):
        assert injection_loss(t([[0.3, 0.2]]), t([[0.3, 0.2]])).item() == 0.0
        assert injection_loss(t(np.zeros((2, 3))), t(np.ones((2, 3))), "L1").item() == 1.0
        assert injection_loss(t(np.zeros((2, 3))), t(np.ones((2, 3))), "L2").item() == 1.0
        assert injection_loss(t([[0.5, 0.5]]), t([[0.0, 1.0]]), "L1").item() == 0.5
        assert injection_loss(t([[0.5, 0.5]]), t([[0.0, 1.0]]), "L2").item() == 0.25

    def test_errors(self):
        with pytest.raises(ValueError):
            injection_loss(t([[0.5]]), t([[0.5, 0.5]]))
        with pytest.raises(ValueError):
            injection_loss(t([[0.5]]), t([[0.5]]), "huber")


class TestTotal:
    def _parts(self):
        truth = t([[1], [1], [1], [1], [0], [0], [0], [0]])
        pred = t([[1], [1], [0], [0], [1], [1], [0], [0]])
        out = ModelOutput(pred, t([[0.5, 0.5]]))
        return out, truth, t([[0.0, 1.0]])

    def test_weighted_sum(self):
        out, s, y = self._parts()
        parts = total_loss(out, s, y, eps=0)
        assert (parts.dice.item(), parts.injection.item(), parts.total.item()) == (0.5, 0.25, 0.75)

    def test_lambdas(self):
        out, s, y = self._parts()
        assert total_loss(out, s, y, lambda1=0, eps=0).total.item() == 0.25
        assert total_loss(out, s, y, lambda2=0, eps=0).total.item() == 0.5
        assert total_loss(out, s, y, lambda1=2, lambda2=4, eps=0).total.item() == 2.0

    def test_missing_head(self):
        out, s, y = self._parts()
        assert total_loss(ModelOutput(None, out.injection), s, y).total.item() == 0.25
        assert total_loss(ModelOutput(out.state_probs, None), s, y, eps=0).total.item() == 0.5

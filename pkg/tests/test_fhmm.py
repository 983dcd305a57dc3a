import itertools

import numpy as np
import pytest

from dualnilm import _kernels_py, kernels
from dualnilm.baselines.fhmm import (MAX_CHAINS, DegenerateChannelError, HmmChain, ProductSpaceTooLarge,
                                     fhmm_decode, fhmm_fit, fit_chain, path_score)

from conftest import square


def chain(name, on, var=25.0, p_stay=0.9, injection=False):
    return HmmChain(name, np.array([0.5, 0.5]), np.array([[p_stay, 1 - p_stay], [1 - p_stay, p_stay]]),
                    np.array([0.0, on]), np.array([var, var]), injection)


def exhaustive(y, chains):
    """Best joint path by enumerating all 2**(K*T) state sequences."""
    T, K = len(y), len(chains)
    best, arg = -np.inf, None
    for bits in itertools.product((0, 1), repeat=T * K):
        states = np.array(bits, dtype=np.uint8).reshape(T, K)
        score = path_score(states, y, chains)
        if score > best + 1e-12:
            best, arg = score, states
    return arg, best


class TestFit:
    def test_square_wave_means(self, rng):
        x = square(4000, 1000.0, 50, 0.4) + rng.normal(0, 2.0, 4000)
        c = fit_chain(x, "heater")
        assert abs(c.means[0] - 0.0) < 1.0 and abs(c.means[1] - 1000.0) < 1.0
        np.testing.assert_allclose(c.transition.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(c.variances > 0)

    def test_noiseless_square_wave_variance_floor(self):
        c = fit_chain(square(500, 100.0, 10, 0.5), "x")
        assert c.variances.min() >= 1e-2
        assert c.means == pytest.approx([0.0, 100.0], abs=1e-6)

    def test_constant_channel(self):
        with pytest.raises(DegenerateChannelError):
            fit_chain(np.full(100, 3.0), "flat")

    @pytest.mark.parametrize("seed", range(5))
    def test_em_monotone_random_init(self, rng, seed):
        x = square(600, 300.0, 31, 0.3) + rng.normal(0, 20.0, 600)
        c = fit_chain(x, rng=np.random.default_rng(seed), tol=0.0, max_iter=60)
        assert np.all(np.diff(c.loglik_trace) >= -1e-8)

    def test_on_state_has_larger_mean(self, rng):
        x = square(400, 50.0, 20, 0.5) + rng.normal(0, 1, 400)
        for seed in range(5):
            c = fit_chain(x, rng=np.random.default_rng(seed))
            assert c.means[1] >= c.means[0]

    def test_fhmm_fit_marks_injection(self, rng):
        chains = fhmm_fit([square(200, 100, 10, 0.5), square(200, 60, 14, 0.5) + rng.normal(0, 1, 200)],
                          names=["a", "pv"], injection_index=1)
        assert [c.name for c in chains] == ["a", "pv"]
        assert [c.sign for c in chains] == [1.0, -1.0]

    def test_bad_chain(self):
        with pytest.raises(ValueError):
            HmmChain("x", np.array([0.5, 0.5]), np.array([[0.5, 0.6], [0.5, 0.5]]), np.zeros(2), np.ones(2))
        with pytest.raises(ValueError):
            HmmChain("x", np.array([0.5, 0.5]), np.eye(2), np.zeros(2), np.array([1.0, 0.0]))


class TestDecode:
    def test_single_clean_square_wave(self):
        truth = square(300, 500.0, 20, 0.5)
        states, inj = fhmm_decode(truth, [chain("a", 500.0)])
        np.testing.assert_array_equal(states[:, 0], (truth > 250).astype(np.uint8))
        assert not inj.any()

    def test_four_joint_states(self):
        levels = {(0, 0): 0.0, (1, 0): 100.0, (0, 1): 1000.0, (1, 1): 1100.0}
        seq = [(0, 0)] * 5 + [(1, 0)] * 5 + [(1, 1)] * 5 + [(0, 1)] * 5 + [(0, 0)] * 5
        y = np.array([levels[s] for s in seq])
        states, _ = fhmm_decode(y, [chain("a", 100.0), chain("b", 1000.0)])
        np.testing.assert_array_equal(states, np.array(seq, dtype=np.uint8))

    def test_injection_chain_negative(self):
        # appliance 500 W always on, generator toggles 0/200 W
        gen = square(40, 200.0, 10, 0.5)
        y = 500.0 - gen
        states, inj = fhmm_decode(y, [chain("a", 500.0), chain("pv", 200.0, injection=True)])
        assert states[:, 0].all()
        np.testing.assert_array_equal(states[:, 1], (gen > 0).astype(np.uint8))
        np.testing.assert_array_equal(inj, gen)

    def test_cap(self):
        with pytest.raises(ProductSpaceTooLarge):
            fhmm_decode(np.zeros(3), [chain(str(i), 10.0) for i in range(MAX_CHAINS + 1)])

    @pytest.mark.parametrize("seed", range(30))
    def test_exhaustive_oracle(self, seed):
        r = np.random.default_rng(seed)
        K, T = int(r.integers(1, 3)), int(r.integers(1, 7))
        chains = []
        for k in range(K):
            trans = r.dirichlet([2.0, 1.0], size=2)
            chains.append(HmmChain(f"c{k}", r.dirichlet([1, 1]), trans, np.sort(r.uniform(0, 300, 2)),
                                   r.uniform(50, 5000, 2), bool(r.integers(0, 2))))
        y = r.uniform(-300, 600, T)
        states, _ = fhmm_decode(y, chains)
        best_states, best = exhaustive(y, chains)
        assert path_score(states, y, chains) == pytest.approx(best, rel=1e-12, abs=1e-9)


class TestKernelBackends:
    def test_backend_selected(self):
        assert kernels.BACKEND in ("cython", "python")

    @pytest.mark.parametrize("K", [1, 2, 3, 5])
    def test_viterbi_backends_agree(self, K):
        if kernels.BACKEND != "cython":
            pytest.skip("compiled extension not built")
        from dualnilm import _kernels
        r = np.random.default_rng(K)
        ls = np.log(r.dirichlet([1, 1], size=K))
        lt = np.log(np.stack([r.dirichlet([3, 1], size=2) for _ in range(K)]))
        le = r.normal(size=(200, 1 << K))
        np.testing.assert_array_equal(_kernels.factorial_viterbi(ls, lt, le),
                                      _kernels_py.factorial_viterbi(ls, lt, le))

    def test_forward_backward_backends_agree(self):
        if kernels.BACKEND != "cython":
            pytest.skip("compiled extension not built")
        from dualnilm import _kernels
        r = np.random.default_rng(0)
        args = (np.log(r.dirichlet([1, 1])), np.log(r.dirichlet([3, 1], size=2)), r.normal(size=(500, 2)) * 30)
        for a, b in zip(_kernels.forward_backward(*args), _kernels_py.forward_backward(*args)):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_forward_backward_matches_brute_force(self):
        r = np.random.default_rng(5)
        start, trans, le = r.dirichlet([1, 1]), r.dirichlet([2, 1], size=2), r.normal(size=(5, 2))
        _, _, ll = kernels.forward_backward(np.log(start), np.log(trans), le)
        total = 0.0
        for path in itertools.product((0, 1), repeat=5):
            p = start[path[0]] * np.exp(le[0, path[0]])
            for t in range(1, 5):
                p *= trans[path[t - 1], path[t]] * np.exp(le[t, path[t]])
            total += p
        assert ll == pytest.approx(np.log(total), rel=1e-12)

    def test_posteriors_normalized(self):
        r = np.random.default_rng(2)
        post, xi, _ = kernels.forward_backward(np.log([0.3, 0.7]), np.log(r.dirichlet([1, 1], size=2)),
                                               r.normal(size=(50, 2)))
        np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)
        assert xi.sum() == pytest.approx(49.0, rel=1e-12)

import math

import numpy as np
import pytest

from mrgrpo.core import Text, Trajectory, Vocab
from mrgrpo.errors import ConfigurationError, InvalidTrajectoryError, SamplingError
from mrgrpo.policy import (
    PolicyArch,
    PolicyParams,
    SamplerConfig,
    build_contexts,
    filtered_distribution,
    init_params,
    logits,
    logprob_and_grad,
    mean_entropy,
    member_rng,
    rollout,
    rollout_batch,
    sample_step,
    token_logprobs,
    zero_params,
)

import oracles

PLAIN = SamplerConfig(top_k=4, top_p=1.0, temperature=1.0, repetition_penalty=1.0)


def edited(params, **blocks):
    """Copy of ``params`` with named blocks modified by callables."""
    theta = params.theta.copy()
    views, i = {}, 0
    for name, shape in params.arch.shapes().items():
        n = int(np.prod(shape))
        views[name] = theta[i:i + n].reshape(shape)
        i += n
    for name, fn in blocks.items():
        fn(views[name])
    return PolicyParams(params.arch, theta)


def random_traj(vocab, rng, prompt_len=4, T=6):
    prompt = Text(tuple(int(s) for s in rng.integers(0, vocab.n_graphemes, prompt_len)))
    acts = tuple(int(a) for a in rng.integers(2, vocab.size, T))
    ref = tuple(int(a) for a in rng.integers(3, vocab.size, 5))
    return Trajectory(prompt, acts, (0.0,) * T, (0.0,) * T, acts[-1] == vocab.eos, ref)


class TestArch:
    def test_param_count(self, small_arch):
        assert small_arch.n_params == 325
        assert init_params(small_arch).theta.size == 325

    def test_mismatched_theta(self, small_arch):
        with pytest.raises(ConfigurationError):
            PolicyParams(small_arch, np.zeros(small_arch.n_params + 1))

    def test_non_finite_theta(self, small_arch):
        theta = np.zeros(small_arch.n_params)
        theta[3] = np.nan
        with pytest.raises(ConfigurationError):
            PolicyParams(small_arch, theta)

    def test_dict_roundtrip(self, small_arch):
        assert PolicyArch.from_dict(small_arch.to_dict()) == small_arch


class TestLogits:
    def test_zero_params(self, small_arch):
        z = logits(zero_params(small_arch), Text((0, 1)), [7, 3], ref_actions=[8])
        assert np.array_equal(z, np.zeros(small_arch.vocab_size))

    def test_deterministic(self, small_arch):
        p = init_params(small_arch, seed=4)
        a = logits(p, Text((0, 1)), [7])
        b = logits(p, Text((0, 1)), [7])
        assert np.array_equal(a, b)

    def test_hand_set_minimum_vocab(self):
        # one grapheme: pad bos eos, four pauses, "a" -> 8 tokens
        arch = PolicyArch(vocab=Vocab(graphemes="a", n_styles=1), window=1, embed_dim=1, hidden_dim=1, progress_clip=1)
        assert arch.vocab_size == 8

        def w2(v):
            v[:, 0] = np.arange(8.0)

        p = edited(zero_params(arch), b1=lambda v: v.fill(math.atanh(0.5)), W2=w2, b2=lambda v: v.fill(1.0))
        z = logits(p, Text((0,)), [])
        np.testing.assert_allclose(z, 0.5 * np.arange(8.0) + 1.0, atol=1e-12)

    def test_prefix_state_matches_trajectory_rows(self, small_arch, vocab):
        p = init_params(small_arch, seed=1)
        tr = random_traj(vocab, np.random.default_rng(0))
        ctx = build_contexts(small_arch, [tr])
        lp = token_logprobs(p, ctx)
        for t in range(len(tr)):
            z = logits(p, tr.prompt, tr.actions[:t], tr.ref_actions)
            expect = z[tr.actions[t]] - np.log(np.exp(z - z.max()).sum()) - z.max()
            assert lp[t] == pytest.approx(expect, abs=1e-12)


class TestSampler:
    def test_uniform_entropy(self):
        _, _, h = sample_step(np.zeros(4), [], PLAIN, np.random.default_rng(0))
        assert h == pytest.approx(math.log(4), abs=1e-9)

    def test_degenerate(self):
        cfg = SamplerConfig(top_k=1, top_p=1.0, temperature=1.0, repetition_penalty=1.0)
        tok, lp, h = sample_step(np.array([10.0, 0, 0, 0]), [], cfg, np.random.default_rng(0))
        assert (tok, lp, h) == (0, 0.0, 0.0)

    def test_tied_top_pair_at_half(self):
        # both tied tokens are kept: the first covers only 0.366 < 0.5 of the mass
        cfg = SamplerConfig(top_k=4, top_p=0.5, temperature=1.0, repetition_penalty=1.0)
        q = filtered_distribution(np.array([1.0, 1.0, 0.0, 0.0]), np.zeros(4, bool), cfg)
        np.testing.assert_allclose(q, [0.5, 0.5, 0, 0], atol=1e-12)
        _, _, h = sample_step(np.array([1.0, 1.0, 0.0, 0.0]), [], cfg, np.random.default_rng(0))
        assert h == pytest.approx(math.log(2), abs=1e-9)

    def test_tie_break_lowest_index(self):
        cfg = SamplerConfig(top_k=4, top_p=0.3, temperature=1.0, repetition_penalty=1.0)
        for seed in range(5):
            tok, _, h = sample_step(np.array([1.0, 1.0, 0.0, 0.0]), [], cfg, np.random.default_rng(seed))
            assert tok == 0 and h == 0.0
        cfg = SamplerConfig(top_k=1, top_p=1.0, temperature=1.0, repetition_penalty=1.0)
        q = filtered_distribution(np.array([0.0, 2.0, 2.0]), np.zeros(3, bool), cfg)
        assert list(q) == [0.0, 1.0, 0.0]

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            V = int(rng.integers(2, 12))
            z = rng.normal(0, 2, V)
            hist = rng.random(V) < 0.3
            cfg = SamplerConfig(top_k=int(rng.integers(1, V + 1)), top_p=float(rng.uniform(0.05, 1.0)),
                                temperature=float(rng.uniform(0.3, 2.0)), repetition_penalty=float(rng.uniform(1, 2)))
            q = filtered_distribution(z, hist, cfg)
            expect = oracles.filtered(list(z), set(np.flatnonzero(hist)), cfg.top_k, cfg.top_p,
                                      cfg.temperature, cfg.repetition_penalty)
            np.testing.assert_allclose(q, expect, atol=1e-12)

    def test_penalty_signs(self):
        cfg = SamplerConfig(top_k=3, top_p=1.0, temperature=1.0, repetition_penalty=2.0)
        q = filtered_distribution(np.array([2.0, -2.0, 0.0]), np.array([True, True, False]), cfg)
        expect = np.exp([1.0, -4.0, 0.0])
        np.testing.assert_allclose(q, expect / expect.sum(), atol=1e-12)

    def test_positive_infinity_forces_token(self):
        z = np.array([0.0, np.inf, 3.0])
        q = filtered_distribution(z, np.zeros(3, bool), SamplerConfig())
        assert list(q) == [0.0, 1.0, 0.0]

    def test_nan_rejected(self):
        with pytest.raises(SamplingError):
            sample_step(np.array([0.0, np.nan]), [], PLAIN, np.random.default_rng(0))

    @pytest.mark.parametrize("kw", [dict(top_k=0), dict(top_p=0.0), dict(top_p=1.5), dict(temperature=0.0),
                                    dict(repetition_penalty=0.9), dict(max_len=0), dict(seed=-1)])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigurationError):
            SamplerConfig(**kw)

    def test_defaults(self):
        cfg = SamplerConfig()
        assert (cfg.top_k, cfg.top_p, cfg.temperature, cfg.repetition_penalty) == (75, 0.9, 1.1, 1.1)


class TestRollout:
    def test_forced_eos(self, small_arch, vocab):
        p = edited(zero_params(small_arch), b2=lambda v: v.__setitem__(vocab.eos, 1e300))
        tr = rollout(p, Text((0, 1)), SamplerConfig(), np.random.default_rng(0))
        assert tr.actions == (vocab.eos,) and tr.terminated_by_eos

    def test_max_len_cap(self, small_arch, vocab):
        p = edited(zero_params(small_arch), b2=lambda v: v.__setitem__(vocab.eos, -1e3))
        tr = rollout(p, Text((0, 1)), SamplerConfig(max_len=8), np.random.default_rng(0))
        assert len(tr) == 8 and not tr.terminated_by_eos

    def test_never_draws_structural_tokens(self, small_arch, vocab):
        p = edited(zero_params(small_arch), b2=lambda v: v.__setitem__([vocab.pad, vocab.bos], 50.0))
        tr = rollout(p, Text((0, 1)), SamplerConfig(max_len=20), np.random.default_rng(1))
        assert vocab.pad not in tr.actions and vocab.bos not in tr.actions

    def test_deterministic(self, small_arch):
        p = init_params(small_arch, seed=42)
        a = rollout(p, Text((0, 1, 2)), SamplerConfig(max_len=16), member_rng(42, 0, 0, 0))
        b = rollout(p, Text((0, 1, 2)), SamplerConfig(max_len=16), member_rng(42, 0, 0, 0))
        assert a == b

    def test_batch_independent_of_companions(self, small_arch):
        p = init_params(small_arch, seed=2)
        cfg = SamplerConfig(max_len=12)
        alone = rollout_batch(p, [Text((0, 1))], cfg, [member_rng(1, 0, 0, 0)])[0]
        together = rollout_batch(p, [Text((3, 2, 1, 0)), Text((0, 1))], cfg,
                                 [member_rng(1, 0, 0, 1), member_rng(1, 0, 0, 0)])[1]
        # batch matmuls may differ in the last ulp, never in the drawn tokens
        assert alone.actions == together.actions
        np.testing.assert_allclose(alone.step_entropies, together.step_entropies, rtol=1e-12)

    def test_logprob_is_filtered(self, small_arch):
        p = init_params(small_arch, seed=3)
        tr = rollout(p, Text((0, 1)), SamplerConfig(max_len=6), np.random.default_rng(0))
        assert all(lp <= 0 for lp in tr.step_logprobs)
        assert all(0 <= h <= math.log(75) for h in tr.step_entropies)

    def test_empty_prompt(self, small_arch):
        with pytest.raises(ConfigurationError):
            rollout(init_params(small_arch), Text(()), SamplerConfig(), np.random.default_rng(0))


class TestMeanEntropy:
    def _t(self, ents):
        return Trajectory(Text((0,)), (7,) * len(ents), (0.0,) * len(ents), tuple(ents), False)

    def test_examples(self):
        assert mean_entropy(self._t([0, 0, 0])) == 0.0
        assert mean_entropy(self._t([math.log(4)] * 2)) == pytest.approx(math.log(4), abs=1e-12)
        assert mean_entropy(self._t([0.5, 1.5])) == pytest.approx(1.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(InvalidTrajectoryError):
            Trajectory(Text((0,)), (), (), (), False)


class TestLogprobGrad:
    def test_zero_weights(self, small_arch, vocab):
        tr = random_traj(vocab, np.random.default_rng(0))
        val, g = logprob_and_grad(init_params(small_arch, 1), tr, np.zeros(len(tr)))
        assert val == 0.0 and not g.any() and g.size == small_arch.n_params

    def test_linear_in_weights(self, small_arch, vocab):
        tr = random_traj(vocab, np.random.default_rng(1))
        p = init_params(small_arch, 1)
        w = np.random.default_rng(2).normal(size=len(tr))
        v1, g1 = logprob_and_grad(p, tr, w)
        v2, g2 = logprob_and_grad(p, tr, 2 * w)
        assert v2 == pytest.approx(2 * v1, rel=1e-12)
        np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12, atol=1e-15)

    def test_wrong_weight_count(self, small_arch, vocab):
        tr = random_traj(vocab, np.random.default_rng(1))
        with pytest.raises(ConfigurationError):
            logprob_and_grad(init_params(small_arch), tr, np.zeros(len(tr) + 1))

    def test_finite_difference(self, small_arch, vocab):
        rng = np.random.default_rng(7)
        p = init_params(small_arch, seed=7, scale=1.0)
        tr = random_traj(vocab, rng, T=5)
        w = rng.normal(size=len(tr))
        _, g = logprob_and_grad(p, tr, w)
        fd = oracles.central_difference(lambda th: logprob_and_grad(PolicyParams(small_arch, np.array(th)), tr, w)[0],
                                        list(p.theta))
        fd = np.array(fd)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)

import numpy as np
import pytest

from mrgrpo.errors import ConfigurationError
from mrgrpo.policy import init_params
from mrgrpo.pretrain import PretrainConfig, make_corpus, pretrain
from mrgrpo.sim_env import synthesize


def test_zero_steps_is_identity(small_arch):
    p = init_params(small_arch)
    q, hist = pretrain(p, PretrainConfig(steps=0))
    assert q is p and hist == []


def test_corpus_is_well_formed(vocab):
    corpus = make_corpus(PretrainConfig(corpus_size=20), vocab)
    assert len(corpus) == 20
    for tr in corpus:
        assert tr.actions[-1] == vocab.eos and tr.terminated_by_eos
        assert synthesize(tr.actions, vocab).transcript == tr.prompt
        styles = {vocab.style_of(a) for a in tr.actions + tr.ref_actions} - {None}
        assert len(styles) == 1


def test_no_jitter_gives_rule_pauses(vocab):
    from mrgrpo.prosody import RuleAnnotator, map_silences_to_markers

    for tr in make_corpus(PretrainConfig(corpus_size=10, pause_jitter=0.0), vocab):
        text = vocab.decode(tr.prompt)
        got = map_silences_to_markers(synthesize(tr.actions, vocab).silence_segments)
        assert got == RuleAnnotator().annotate(text, k=1)[0]


def test_likelihood_improves(small_arch):
    _, hist = pretrain(init_params(small_arch, seed=0), PretrainConfig(steps=60, batch_size=16, corpus_size=64))
    assert np.mean(hist[-10:]) < np.mean(hist[:10])


def test_deterministic(small_arch):
    cfg = PretrainConfig(steps=5, batch_size=4, corpus_size=8)
    a, _ = pretrain(init_params(small_arch), cfg)
    b, _ = pretrain(init_params(small_arch), cfg)
    assert np.array_equal(a.theta, b.theta)


@pytest.mark.parametrize("kw", [dict(steps=-1), dict(batch_size=0), dict(learning_rate=0.0), dict(min_len=0),
                                dict(pause_jitter=1.5), dict(comma_prob=1.0)])
def test_invalid(kw):
    with pytest.raises(ConfigurationError):
        PretrainConfig(**kw)

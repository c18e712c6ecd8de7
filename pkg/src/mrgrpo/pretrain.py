"""Supervised warm start standing in for a pretrained speech model.

GRPO fine-tunes a policy that can already speak. A random toy policy cannot,
and with a binary exact-match prosody reward it essentially never discovers a
correct pause by chance. This module fits the policy by maximum likelihood on
a separate synthetic corpus of spoken utterances, giving it a natural (but
imperfect) habit of pausing at punctuation before RL starts.

The corpus never uses the task prompts: it is drawn from its own seed stream.
Pause levels in the corpus are jittered so that the warm-started policy does
not already reproduce the annotation templates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import N_PAUSE_LEVELS, Trajectory, Vocab
from .errors import ConfigurationError, TrainingError
from .grpo import GrpoConfig, adam_update
from .policy import PolicyParams, build_contexts, weighted_logprob_grad
from .prosody import CLAUSE_BREAK, SENTENCE_FINAL, RuleAnnotator
from .tasks import TaskSpec, _random_text, _spoken

_CORPUS_STREAM = 0xB0A7


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 0
    batch_size: int = 32
    learning_rate: float = 0.01
    corpus_size: int = 512
    min_len: int = 4
    max_len: int = 8
    comma_prob: float = 0.3
    pause_jitter: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigurationError("pretrain.steps must be >= 0")
        if self.batch_size < 1 or self.corpus_size < 1:
            raise ConfigurationError("pretrain.batch_size and pretrain.corpus_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("pretrain.learning_rate must be > 0")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigurationError("pretrain length range is empty")
        if not 0 <= self.pause_jitter <= 1:
            raise ConfigurationError("pretrain.pause_jitter must lie in [0, 1]")
        if not 0 <= self.comma_prob < 1:
            raise ConfigurationError("pretrain.comma_prob must lie in [0, 1)")


def _jitter(pauses, rng, p: float):
    """Replace each pause level by a uniformly random one with probability ``p``."""
    markers = []
    for m in pauses.markers:
        level = int(m.label)
        if rng.random() < p:
            level = int(rng.integers(1, N_PAUSE_LEVELS + 1))
        markers.append(type(m)(m.position, level))
    return type(pauses)(pauses.scheme, tuple(markers))


def make_corpus(cfg: PretrainConfig, vocab: Vocab) -> list[Trajectory]:
    """Spoken utterances ``(text, reference, tokens + eos)`` from one speaker each."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _CORPUS_STREAM]))
    spec = TaskSpec(name="pause_match", min_len=cfg.min_len, max_len=cfg.max_len, comma_prob=cfg.comma_prob)
    punctuated = any(c in vocab.graphemes for c in SENTENCE_FINAL + CLAUSE_BREAK)
    rule = RuleAnnotator()
    out = []
    for _ in range(cfg.corpus_size):
        text = _random_text(rng, spec, vocab, punctuated)
        ref_text = _random_text(rng, spec, vocab, punctuated)
        style = int(rng.integers(0, vocab.n_styles))
        pauses = _jitter(rule.annotate(text, k=1)[0], rng, cfg.pause_jitter)
        ref_pauses = rule.annotate(ref_text, k=1)[0]
        actions = _spoken(text, vocab, style, pauses) + (vocab.eos,)
        n = len(actions)
        out.append(Trajectory(vocab.encode(text), actions, (0.0,) * n, (0.0,) * n, True,
                              _spoken(ref_text, vocab, style, ref_pauses)))
    return out


def pretrain(params: PolicyParams, cfg: PretrainConfig) -> tuple[PolicyParams, list[float]]:
    """Minibatch Adam on token-level negative log-likelihood; returns params and per-step NLL."""
    if cfg.steps == 0:
        return params, []
    corpus = make_corpus(cfg, params.arch.vocab)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _CORPUS_STREAM, 1]))
    opt = GrpoConfig(learning_rate=cfg.learning_rate)
    m = np.zeros_like(params.theta)
    v = np.zeros_like(params.theta)
    history = []
    for t in range(1, cfg.steps + 1):
        idx = rng.choice(len(corpus), size=min(cfg.batch_size, len(corpus)), replace=False)
        ctx = build_contexts(params.arch, [corpus[i] for i in idx])
        w = np.full(ctx.n_rows, 1.0 / ctx.n_rows)
        value, grad, _ = weighted_logprob_grad(params, ctx, w)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite likelihood at pretraining step {t}")
        theta, m, v = adam_update(params.theta, -grad, m, v, t, opt)
        params = params.with_theta(theta)
        history.append(-value)
    return params, history

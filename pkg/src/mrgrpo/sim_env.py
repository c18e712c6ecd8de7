"""Deterministic stand-in for audio synthesis, ASR and the speaker encoder.

A token sequence is "spoken" as follows:

* each grapheme token contributes its grapheme to the transcript and lasts
  ``d_tok`` seconds;
* a pause token contributes no grapheme but a silence of its level's duration,
  recorded at the inter-word position equal to the number of graphemes spoken
  so far (adjacent pauses at one position merge into one silence);
* ``pad``/``bos``/``eos`` are silent and take no time;
* the speaker vector is an L2-normalised random projection of the unigram +
  bigram histogram of ``[bos] + actions``. The projection matrix comes from a
  splitmix64 stream seeded with ``0xC0DEC`` so it is identical everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import N_PAUSE_LEVELS, Text, Vocab
from .errors import ConfigurationError, InvalidReferenceError, SynthesisError

PROJECTION_SEED = 0xC0DEC
SPEAKER_DIM = 64

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class EnvConfig:
    d_tok: float = 0.1
    pause_durations: tuple[float, ...] = (0.1, 0.2, 0.4, 0.6)
    speaker_dim: int = SPEAKER_DIM
    projection_seed: int = PROJECTION_SEED
    # probability that the mock recogniser substitutes a grapheme
    asr_sub_prob: float = 0.0
    # std (seconds) of additive noise on silence durations, simulating timestamp error
    timestamp_jitter: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pause_durations", tuple(float(d) for d in self.pause_durations))
        if not self.d_tok > 0:
            raise ConfigurationError("env.d_tok must be > 0")
        if len(self.pause_durations) != N_PAUSE_LEVELS or any(d <= 0 for d in self.pause_durations):
            raise ConfigurationError("env.pause_durations needs 4 positive durations")
        if not 0 <= self.asr_sub_prob <= 1:
            raise ConfigurationError("env.asr_sub_prob must lie in [0, 1]")
        if self.timestamp_jitter < 0:
            raise ConfigurationError("env.timestamp_jitter must be >= 0")
        if self.speaker_dim < 1:
            raise ConfigurationError("env.speaker_dim must be >= 1")


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    transcript: Text
    total_duration: float
    silence_segments: tuple[tuple[int, float], ...]
    speaker_vec: np.ndarray


@dataclass(frozen=True, eq=False)
class ReferencePair:
    ref_text: Text
    ref_speaker_vec: np.ndarray
    r_ref: float
    ref_actions: tuple[int, ...] = ()


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of the splitmix64 generator as uint64."""
    with np.errstate(over="ignore"):
        state = np.uint64(seed) + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = (state ^ (state >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


@lru_cache(maxsize=16)
def speaker_projection(vocab_size: int, dim: int = SPEAKER_DIM, seed: int = PROJECTION_SEED) -> np.ndarray:
    """``(dim, V + V*V)`` matrix with entries uniform in [-1, 1)."""
    n_feat = vocab_size + vocab_size * vocab_size
    bits = splitmix64(seed, dim * n_feat) >> np.uint64(11)
    m = bits.astype(np.float64) * (2.0 / 2.0 ** 53) - 1.0
    m = m.reshape(dim, n_feat)
    m.setflags(write=False)
    return m


def speaker_vector(actions: Sequence[int], vocab: Vocab, env: EnvConfig = EnvConfig()) -> np.ndarray:
    V = vocab.size
    seq = np.concatenate([[vocab.bos], np.asarray(actions, dtype=np.int64)])
    hist = np.zeros(V + V * V)
    np.add.at(hist, seq, 1.0)
    np.add.at(hist, V + seq[:-1] * V + seq[1:], 1.0)
    v = speaker_projection(V, env.speaker_dim, env.projection_seed) @ hist
    return v / np.linalg.norm(v)


def _noise_rng(env: EnvConfig, actions: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([env.noise_seed, len(actions), *map(int, actions)]))


def synthesize(actions: Sequence[int], vocab: Vocab, env: EnvConfig = EnvConfig()) -> SynthesisResult:
    """Map a token sequence to transcript, durations, silences and speaker vector.

    Pure: identical inputs give bitwise-identical outputs (the optional noise is
    seeded from the actions themselves).
    """
    if len(actions) == 0:
        raise SynthesisError("cannot synthesize an empty action sequence")
    V = vocab.size
    transcript: list[int] = []
    silences: list[list] = []
    durations: list[float] = []
    for a in actions:
        a = int(a)
        if not 0 <= a < V:
            raise SynthesisError(f"token {a} outside vocabulary of size {V}")
        sym = vocab.symbol_of(a)
        if sym is not None:
            transcript.append(sym)
            durations.append(env.d_tok)
            continue
        level = vocab.pause_level(a)
        if level is None:
            continue
        d = env.pause_durations[level - 1]
        durations.append(d)
        pos = len(transcript)
        if silences and silences[-1][0] == pos:
            silences[-1][1] += d
        else:
            silences.append([pos, d])

    if env.asr_sub_prob > 0 or env.timestamp_jitter > 0:
        rng = _noise_rng(env, actions)
        if env.asr_sub_prob > 0 and vocab.n_graphemes > 1:
            for i, s in enumerate(transcript):
                if rng.random() < env.asr_sub_prob:
                    transcript[i] = int((s + rng.integers(1, vocab.n_graphemes)) % vocab.n_graphemes)
        if env.timestamp_jitter > 0:
            for seg in silences:
                seg[1] = max(seg[1] + rng.normal(0.0, env.timestamp_jitter), 1e-6)

    return SynthesisResult(
        transcript=Text(tuple(transcript)),
        total_duration=float(sum(durations)),
        silence_segments=tuple((int(p), float(d)) for p, d in silences),
        speaker_vec=speaker_vector(actions, vocab, env),
    )


def make_reference(ref_text: Text, ref_actions: Sequence[int], vocab: Vocab, env: EnvConfig = EnvConfig()) -> ReferencePair:
    """Reference speaking rate (symbols / second) and speaker vector."""
    synth = synthesize(ref_actions, vocab, env)
    if synth.total_duration <= 0:
        raise InvalidReferenceError("reference speech has zero duration")
    if len(ref_text) == 0:
        raise InvalidReferenceError("reference text is empty")
    return ReferencePair(
        ref_text=ref_text,
        ref_speaker_vec=synth.speaker_vec,
        r_ref=len(ref_text) / synth.total_duration,
        ref_actions=tuple(int(a) for a in ref_actions),
    )

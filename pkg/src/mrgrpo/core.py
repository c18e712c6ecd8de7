"""Shared vocabulary, text, trajectory and group containers.

All containers are frozen dataclasses holding tuples, so they can be shared
freely between workers once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import (
    ConfigurationError,
    InvalidGroupError,
    InvalidTrajectoryError,
    RewardComputationError,
)

# Population std below this is treated as zero when normalizing a group.
EPS_STD = 1e-8

COMPONENTS = ("r_intl", "r_sim", "r_len", "r_ent", "r_pro")

N_PAUSE_LEVELS = 4


@dataclass(frozen=True)
class Vocab:
    """Token alphabet of the toy codec.

    Layout (ids)::

        pad, bos, eos                       0, 1, 2
        pause levels #1..#4                 3..6
        grapheme g spoken in style s        7 + s * n_graphemes + g

    Every grapheme exists in ``n_styles`` acoustic variants; they transcribe
    identically but leave different fingerprints in the speaker vector, which
    is how a single token stream carries both content and voice.
    """

    graphemes: str = "abcdef,."
    n_styles: int = 2
    pad: int = 0
    bos: int = 1
    eos: int = 2
    pause_start: int = 3

    def __post_init__(self):
        if not self.graphemes:
            raise ConfigurationError("vocab needs at least one grapheme")
        if len(set(self.graphemes)) != len(self.graphemes):
            raise ConfigurationError("grapheme characters must be unique")
        if self.n_styles < 1:
            raise ConfigurationError("n_styles must be >= 1")
        specials = (self.pad, self.bos, self.eos)
        if len(set(specials)) != 3:
            raise ConfigurationError("pad/bos/eos ids must be distinct")
        pause = set(self.pause_ids)
        if pause & set(specials):
            raise ConfigurationError("pause range overlaps pad/bos/eos")
        if any(i < 0 or i >= self.size for i in specials + tuple(pause)):
            raise ConfigurationError("special ids must lie inside the vocabulary")
        if self.first_grapheme <= max(specials):
            raise ConfigurationError("special ids must precede the grapheme block")

    @property
    def n_graphemes(self) -> int:
        return len(self.graphemes)

    @property
    def pause_ids(self) -> tuple[int, ...]:
        return tuple(range(self.pause_start, self.pause_start + N_PAUSE_LEVELS))

    @property
    def first_grapheme(self) -> int:
        return self.pause_start + N_PAUSE_LEVELS

    @property
    def size(self) -> int:
        return self.first_grapheme + self.n_graphemes * self.n_styles

    def token(self, symbol: int, style: int = 0) -> int:
        if not 0 <= symbol < self.n_graphemes or not 0 <= style < self.n_styles:
            raise ConfigurationError(f"no token for symbol={symbol} style={style}")
        return self.first_grapheme + style * self.n_graphemes + symbol

    def pause_token(self, level: int) -> int:
        if not 1 <= level <= N_PAUSE_LEVELS:
            raise ConfigurationError(f"pause level must be 1..4, got {level}")
        return self.pause_start + level - 1

    def symbol_of(self, token: int) -> int | None:
        """Grapheme id a token transcribes to, or None for non-grapheme tokens."""
        k = token - self.first_grapheme
        if 0 <= k < self.n_graphemes * self.n_styles:
            return k % self.n_graphemes
        return None

    def style_of(self, token: int) -> int | None:
        k = token - self.first_grapheme
        if 0 <= k < self.n_graphemes * self.n_styles:
            return k // self.n_graphemes
        return None

    def pause_level(self, token: int) -> int | None:
        k = token - self.pause_start
        return k + 1 if 0 <= k < N_PAUSE_LEVELS else None

    def symbol_table(self) -> np.ndarray:
        """Array mapping token id -> grapheme id (-1 for non-graphemes)."""
        table = np.full(self.size, -1, dtype=np.int64)
        for s in range(self.n_styles):
            start = self.first_grapheme + s * self.n_graphemes
            table[start:start + self.n_graphemes] = np.arange(self.n_graphemes)
        return table

    def encode(self, s: str) -> "Text":
        try:
            return Text(tuple(self.graphemes.index(c) for c in s))
        except ValueError:
            bad = [c for c in s if c not in self.graphemes]
            raise ConfigurationError(f"characters {bad!r} not in alphabet {self.graphemes!r}")

    def decode(self, text: "Text") -> str:
        return "".join(self.graphemes[i] for i in text.symbols)

    def speak(self, text: "Text", style: int = 0) -> tuple[int, ...]:
        """Token sequence that reads ``text`` aloud in one style (no pauses)."""
        return tuple(self.token(g, style) for g in text.symbols)


@dataclass(frozen=True)
class Text:
    symbols: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class Trajectory:
    """One sampled token sequence.

    ``step_logprobs`` and ``step_entropies`` describe the filtered sampling
    distribution actually used at each step. ``ref_actions`` is the reference
    speech the policy was conditioned on.
    """

    prompt: Text
    actions: tuple[int, ...]
    step_logprobs: tuple[float, ...]
    step_entropies: tuple[float, ...]
    terminated_by_eos: bool
    ref_actions: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.actions)
        if n < 1:
            raise InvalidTrajectoryError("trajectory must contain at least one action")
        if len(self.step_logprobs) != n or len(self.step_entropies) != n:
            raise InvalidTrajectoryError(
                f"length mismatch: actions={n} logprobs={len(self.step_logprobs)} "
                f"entropies={len(self.step_entropies)}"
            )
        if any(h < 0 for h in self.step_entropies):
            raise InvalidTrajectoryError("step entropies must be non-negative")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class RewardConfig:
    """Reward coefficients and shaping constants.

    ``h_target=None`` means "estimate from calibration rollouts at the start of
    training" (see ``rewards.estimate_h_target``).
    """

    alpha_intl: float = 1.0
    alpha_sim: float = 1.0
    alpha_len: float = 0.1
    alpha_ent: float = 1.0
    alpha_pro: float = 1.0
    len_a: float = 0.8
    len_b: float = 1.25
    lambda_ent: float = 1.0
    h_target: float | None = None
    h_target_percentile: float = 75.0
    clamp_intl: bool = False

    def __post_init__(self):
        for name in ("alpha_intl", "alpha_sim", "alpha_len", "alpha_ent", "alpha_pro", "lambda_ent"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"reward.{name} must be a finite non-negative number, got {v}")
        if not (0 < self.len_a < self.len_b):
            raise ConfigurationError(f"need 0 < len_a < len_b, got [{self.len_a}, {self.len_b}]")
        if self.h_target is not None and not (self.h_target >= 0):
            raise ConfigurationError("reward.h_target must be >= 0")
        if not 0 < self.h_target_percentile <= 100:
            raise ConfigurationError("reward.h_target_percentile must lie in (0, 100]")

    @property
    def alphas(self) -> tuple[float, float, float, float, float]:
        return (self.alpha_intl, self.alpha_sim, self.alpha_len, self.alpha_ent, self.alpha_pro)


@dataclass(frozen=True)
class RewardBreakdown:
    r_intl: float
    r_sim: float
    r_len: float
    r_ent: float
    r_pro: float
    total: float

    @classmethod
    def build(cls, cfg: RewardConfig, **parts: float) -> "RewardBreakdown":
        return cls(**{k: float(parts[k]) for k in COMPONENTS}, total=aggregate_reward(parts, cfg))

    def components(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in COMPONENTS}


@dataclass(frozen=True)
class RolloutGroup:
    prompt: Text
    members: tuple[Trajectory, ...]
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    breakdowns: tuple[RewardBreakdown, ...] = field(default=(), compare=False)

    def __post_init__(self):
        g = len(self.members)
        if g < 2:
            raise InvalidGroupError(f"group needs at least 2 members, got {g}")
        if len(self.rewards) != g or len(self.advantages) != g:
            raise InvalidGroupError("rewards/advantages must have one entry per member")

    @property
    def size(self) -> int:
        return len(self.members)


def normalize_group_advantages(rewards: Sequence[float], eps_std: float = EPS_STD) -> np.ndarray:
    """Group-relative advantages ``(r - mean) / max(std, eps_std)``.

    Uses the population std. A group whose rewards are all identical gets
    all-zero advantages.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise InvalidGroupError(f"group needs at least 2 rewards, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidGroupError("rewards must be finite")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    # differences to the first member cancel any exactly representable shift
    d = r - r[0]
    centered = d - d.mean()
    adv = centered / max(float(np.sqrt(np.mean(centered ** 2))), eps_std)
    # removes the rounding residue left by the first centering
    return adv - adv.mean()


RewardParts = Union[RewardBreakdown, Mapping[str, float]]


def aggregate_reward(parts: RewardParts, cfg: RewardConfig) -> float:
    """Alpha-weighted sum of the five reward components."""
    if isinstance(parts, RewardBreakdown):
        parts = parts.components()
    total = 0.0
    for name, alpha in zip(COMPONENTS, cfg.alphas):
        try:
            v = float(parts[name])
        except KeyError:
            raise RewardComputationError(name, "component missing")
        if not math.isfinite(v):
            raise RewardComputationError(name, f"non-finite value {v}")
        total += alpha * v
    return total


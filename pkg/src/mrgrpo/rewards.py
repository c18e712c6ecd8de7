"""The five reward terms and their weighted composition."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from .core import RewardBreakdown, RewardConfig, Text, Trajectory
from .errors import (
    AnnotationMissingError,
    CalibrationError,
    ConfigurationError,
    InvalidDurationError,
    InvalidEmbeddingError,
    InvalidTargetError,
    MrgrpoError,
    RewardComputationError,
)
from .policy import mean_entropy
from .prosody import DEFAULT_THRESHOLDS, PW_MAX_LEVEL, PauseSequence, PauseTemplateSet, map_silences_to_markers
from .sim_env import ReferencePair, SynthesisResult


def _symbols(s) -> Sequence[Hashable]:
    return s.symbols if isinstance(s, Text) else s


def levenshtein(s1, s2) -> int:
    """Unit-cost edit distance (bit-parallel, Myers/Hyyrö)."""
    a, b = _symbols(s1), _symbols(s2)
    if len(a) < len(b):
        a, b = b, a
    m = len(b)
    if m == 0:
        return len(a)
    peq: dict = {}
    for i, c in enumerate(b):
        peq[c] = peq.get(c, 0) | (1 << i)
    full = (1 << m) - 1
    top = 1 << (m - 1)
    pv, mv, score = full, 0, m
    for c in a:
        eq = peq.get(c, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | (~(xh | pv) & full)
        mh = pv & xh
        if ph & top:
            score += 1
        elif mh & top:
            score -= 1
        ph = ((ph << 1) | 1) & full
        mh = (mh << 1) & full
        pv = mh | (~(xv | ph) & full)
        mv = ph & xv
    return score


def reward_intl(S, S_hat, clamp: bool = False) -> float:
    """``1 - D_lev(S_hat, S) / |S|``; negative when the transcript is far off
    unless ``clamp`` is set."""
    target = _symbols(S)
    if len(target) == 0:
        raise InvalidTargetError("target text is empty")
    r = 1.0 - levenshtein(S_hat, target) / len(target)
    return max(r, 0.0) if clamp else r


def reward_sim(e, e_ref) -> float:
    """Cosine similarity of two embeddings."""
    e = np.asarray(e, dtype=np.float64)
    e_ref = np.asarray(e_ref, dtype=np.float64)
    if e.shape != e_ref.shape or e.ndim != 1:
        raise InvalidEmbeddingError(f"embedding shapes differ: {e.shape} vs {e_ref.shape}")
    n1, n2 = np.linalg.norm(e), np.linalg.norm(e_ref)
    if n1 == 0 or n2 == 0:
        raise InvalidEmbeddingError("zero-norm embedding")
    return float(np.clip(e @ e_ref / (n1 * n2), -1.0, 1.0))


@dataclass(frozen=True)
class LengthRewardInputs:
    T_text: int
    T: float
    r_ref: float
    a: float = 0.8
    b: float = 1.25

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise ConfigurationError(f"need 0 < a < b, got [{self.a}, {self.b}]")

    @property
    def ratio(self) -> float:
        return (self.T_text / self.T) / self.r_ref


def reward_len(inp: LengthRewardInputs) -> float:
    """1 when the normalised speaking rate lies in the closed band ``[a, b]``."""
    if not inp.T > 0:
        raise InvalidDurationError(f"generated duration must be positive, got {inp.T}")
    if not inp.r_ref > 0:
        raise InvalidDurationError(f"reference rate must be positive, got {inp.r_ref}")
    return 1.0 if inp.a <= inp.ratio <= inp.b else 0.0


def reward_ent(h_bar: float, h_target: float, lambda_ent: float) -> float:
    """Hinge penalty on mean token entropy above the target."""
    if lambda_ent < 0:
        raise ConfigurationError("lambda_ent must be >= 0")
    if h_bar <= h_target:
        return 0.0
    return -lambda_ent * (h_bar - h_target)


def nearest_rank(values: Iterable[float], percentile: float) -> float:
    v = sorted(values)
    if not v:
        raise CalibrationError("no values to take a percentile of")
    if not 0 < percentile <= 100:
        raise CalibrationError(f"percentile must lie in (0, 100], got {percentile}")
    rank = max(1, math.ceil(percentile * len(v) / 100))
    return float(v[rank - 1])


def estimate_h_target(calibration: Sequence[Trajectory], percentile: float = 75.0) -> float:
    """Nearest-rank percentile of the mean entropies of calibration trajectories."""
    if len(calibration) == 0:
        raise CalibrationError("calibration set is empty")
    return nearest_rank((mean_entropy(t) for t in calibration), percentile)


def reward_pro(predicted: PauseSequence, templates: PauseTemplateSet | Sequence[PauseSequence]) -> float:
    """1 when the predicted pause sequence equals one of the templates."""
    members = templates.templates if isinstance(templates, PauseTemplateSet) else tuple(templates)
    if not members:
        raise AnnotationMissingError("template set is empty")
    return 1.0 if predicted in members else 0.0


def predicted_pauses(synth: SynthesisResult, scheme: str, thresholds=DEFAULT_THRESHOLDS,
                     pw_max_level: int = PW_MAX_LEVEL) -> PauseSequence:
    return map_silences_to_markers(synth.silence_segments, thresholds, scheme, pw_max_level)


def score_trajectory(
    traj: Trajectory,
    synth: SynthesisResult,
    ref: ReferencePair,
    templates: PauseTemplateSet | None,
    cfg: RewardConfig,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    pw_max_level: int = PW_MAX_LEVEL,
) -> RewardBreakdown:
    """All five rewards and their weighted total.

    Conventions for degenerate rollouts: output with zero duration (only
    control tokens) scores ``r_len = 0``. A prompt without templates scores
    ``r_pro = 0`` when ``alpha_pro == 0`` and is an error otherwise.
    """

    def tagged(name, fn):
        try:
            return fn()
        except MrgrpoError as exc:
            raise RewardComputationError(name, str(exc)) from exc

    r_intl = tagged("r_intl", lambda: reward_intl(traj.prompt, synth.transcript, cfg.clamp_intl))
    r_sim = tagged("r_sim", lambda: reward_sim(synth.speaker_vec, ref.ref_speaker_vec))
    if synth.total_duration > 0:
        r_len = tagged("r_len", lambda: reward_len(
            LengthRewardInputs(len(traj.prompt), synth.total_duration, ref.r_ref, cfg.len_a, cfg.len_b)))
    else:
        r_len = 0.0
    if cfg.h_target is None:
        raise RewardComputationError("r_ent", "h_target has not been calibrated")
    r_ent = tagged("r_ent", lambda: reward_ent(mean_entropy(traj), cfg.h_target, cfg.lambda_ent))
    if templates is None:
        if cfg.alpha_pro != 0:
            raise RewardComputationError("r_pro", "no pause templates for this prompt")
        r_pro = 0.0
    else:
        r_pro = tagged("r_pro", lambda: reward_pro(
            predicted_pauses(synth, templates.scheme, thresholds, pw_max_level), templates))
    return RewardBreakdown.build(cfg, r_intl=r_intl, r_sim=r_sim, r_len=r_len, r_ent=r_ent, r_pro=r_pro)

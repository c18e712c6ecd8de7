"""Multi-reward GRPO for discrete speech-token policies, on a synthetic environment.

The package wires five rewards (intelligibility, speaker similarity, length,
entropy, prosody alignment) into a group-relative policy-gradient trainer for a
small autoregressive token policy. A deterministic simulator replaces the
speech codec, recogniser and speaker encoder so every quantity is exact.
"""

from .core import RewardBreakdown, RewardConfig, RolloutGroup, Text, Trajectory, Vocab, normalize_group_advantages
from .grpo import GrpoConfig, PromptTriple, TrainerState, TrainSetup, surrogate_loss, train_step
from .policy import PolicyArch, PolicyParams, SamplerConfig, init_params, rollout
from .rewards import levenshtein, reward_ent, reward_intl, reward_len, reward_pro, reward_sim, score_trajectory
from .sim_env import EnvConfig, synthesize

__version__ = "0.1.0"

__all__ = [
    "EnvConfig",
    "GrpoConfig",
    "PolicyArch",
    "PolicyParams",
    "PromptTriple",
    "RewardBreakdown",
    "RewardConfig",
    "RolloutGroup",
    "SamplerConfig",
    "Text",
    "TrainSetup",
    "TrainerState",
    "Trajectory",
    "Vocab",
    "init_params",
    "levenshtein",
    "normalize_group_advantages",
    "reward_ent",
    "reward_intl",
    "reward_len",
    "reward_pro",
    "reward_sim",
    "rollout",
    "score_trajectory",
    "surrogate_loss",
    "synthesize",
    "train_step",
]

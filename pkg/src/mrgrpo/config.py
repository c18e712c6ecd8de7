"""Run configuration: one YAML tree, versioned, validated up front.

Top-level keys (all optional except ``schema_version``)::

    schema_version: 1
    seed: 0                # run seed (init, rollouts, batch order)
    model:    {graphemes, n_styles, window, embed_dim, hidden_dim, progress_clip, init_scale}
    pretrain: {steps, batch_size, learning_rate, corpus_size, min_len, max_len, comma_prob,
               pause_jitter, seed}
    sampler:  {top_k, top_p, temperature, repetition_penalty, max_len, seed}
    reward:   {alpha_intl, alpha_sim, alpha_len, alpha_ent, alpha_pro, len_a, len_b,
               lambda_ent, h_target, h_target_percentile, clamp_intl}
    grpo:     {group_size, batch_size, learning_rate, clip_epsilon, kl_coef, epochs_per_batch,
               total_steps, length_norm, ref_refresh_interval, adam_beta1, adam_beta2, adam_eps}
    env:      {d_tok, pause_durations, speaker_dim, projection_seed, asr_sub_prob,
               timestamp_jitter, noise_seed}
    prosody:  {thresholds, pw_max_level}
    task:     {name, prompt_count, min_len, max_len, seed, comma_prob, template_k}
    run:      {out_dir, checkpoint_interval, dataset, templates, eval_count, eval_seed,
               eval_interval, calibration_count, calibration_seed}
    ablation: {seeds}
    sweep:    {axis, data_scales, model_widths, seeds}

``sampler.seed`` is the evaluation sampler seed. ``run.dataset`` and
``run.templates`` may be null, in which case the task is generated in memory
from ``task``. Relative paths are resolved against the config file's folder.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .core import RewardConfig, Vocab
from .errors import ConfigurationError
from .grpo import GrpoConfig, TrainSetup
from .policy import PolicyArch, SamplerConfig
from .pretrain import PretrainConfig
from .prosody import DEFAULT_THRESHOLDS, PW_MAX_LEVEL
from .sim_env import EnvConfig
from .tasks import TaskSpec

SCHEMA_VERSION = 1
SWEEP_AXES = ("data_scale", "model_scale")


@dataclass(frozen=True)
class ModelConfig:
    graphemes: str = "abcdef,."
    n_styles: int = 2
    window: int = 8
    embed_dim: int = 8
    hidden_dim: int = 32
    progress_clip: int = 8
    init_scale: float = 0.1

    def __post_init__(self):
        if not self.init_scale > 0:
            raise ConfigurationError("model.init_scale must be > 0")
        self.arch()

    def vocab(self) -> Vocab:
        return Vocab(graphemes=self.graphemes, n_styles=self.n_styles)

    def arch(self, hidden_dim: int | None = None) -> PolicyArch:
        return PolicyArch(vocab=self.vocab(), window=self.window, embed_dim=self.embed_dim,
                          hidden_dim=hidden_dim or self.hidden_dim, progress_clip=self.progress_clip)


@dataclass(frozen=True)
class ProsodyConfig:
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    pw_max_level: int = PW_MAX_LEVEL

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        object.__setattr__(self, "thresholds", t)
        if len(t) != 4 or any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0:
            raise ConfigurationError("prosody.thresholds must be 4 strictly increasing positive values")
        if not 1 <= self.pw_max_level <= 3:
            raise ConfigurationError("prosody.pw_max_level must lie in [1, 3]")


@dataclass(frozen=True)
class RunSection:
    out_dir: str = "runs/default"
    checkpoint_interval: int = 0
    dataset: str | None = None
    templates: str | None = None
    eval_count: int = 32
    eval_seed: int = 12345
    # 0 evaluates only at the start and the end
    eval_interval: int = 0
    calibration_count: int = 32
    calibration_seed: int = 999

    def __post_init__(self):
        if self.checkpoint_interval < 0:
            raise ConfigurationError("run.checkpoint_interval must be >= 0 (0 = final only)")
        if self.eval_interval < 0:
            raise ConfigurationError("run.eval_interval must be >= 0")
        if self.eval_count < 1 or self.calibration_count < 1:
            raise ConfigurationError("run.eval_count and run.calibration_count must be >= 1")


@dataclass(frozen=True)
class AblationConfig:
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigurationError("ablation.seeds must be non-empty")


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "data_scale"
    data_scales: tuple[int, ...] = (16, 64, 256)
    model_widths: tuple[int, ...] = (8, 32, 128)
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        for name in ("data_scales", "model_widths", "seeds"):
            object.__setattr__(self, name, tuple(int(s) for s in getattr(self, name)))
        if self.axis not in SWEEP_AXES:
            raise ConfigurationError(f"sweep.axis must be one of {SWEEP_AXES}")
        if not self.data_scales or min(self.data_scales) < 1:
            raise ConfigurationError("sweep.data_scales must be positive integers")
        if not self.model_widths or min(self.model_widths) < 1:
            raise ConfigurationError("sweep.model_widths must be positive integers")
        if not self.seeds:
            raise ConfigurationError("sweep.seeds must be non-empty")


SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "pretrain": PretrainConfig,
    "sampler": SamplerConfig,
    "reward": RewardConfig,
    "grpo": GrpoConfig,
    "env": EnvConfig,
    "prosody": ProsodyConfig,
    "task": TaskSpec,
    "run": RunSection,
    "ablation": AblationConfig,
    "sweep": SweepConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    prosody: ProsodyConfig = field(default_factory=ProsodyConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    run: RunSection = field(default_factory=RunSection)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    # folder that relative paths are resolved against
    base_dir: str = "."

    def setup(self, reward: RewardConfig | None = None) -> TrainSetup:
        return TrainSetup(grpo=self.grpo, sampler=self.sampler, reward=reward or self.reward, env=self.env,
                          thresholds=self.prosody.thresholds, pw_max_level=self.prosody.pw_max_level)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def replace(self, **sections) -> "RunConfig":
        """Copy with whole sections or ``section__field`` values overridden."""
        direct, nested = {}, {}
        for key, val in sections.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                nested.setdefault(sec, {})[name] = val
            else:
                direct[key] = val
        for sec, vals in nested.items():
            direct[sec] = dataclasses.replace(direct.get(sec, getattr(self, sec)), **vals)
        return dataclasses.replace(self, **direct)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "seed": self.seed}
        for name in SECTIONS:
            sec = {}
            for f in dataclasses.fields(getattr(self, name)):
                v = getattr(getattr(self, name), f.name)
                sec[f.name] = list(v) if isinstance(v, tuple) else v
            out[name] = sec
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _coerce(value, default, where: str, errors: list[str]):
    """Check ``value`` against the type of the field default."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errors.append(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{where}: expected a number, got {value!r}")
            return value
        if not math.isfinite(value):
            errors.append(f"{where}: must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            errors.append(f"{where}: expected a list, got {value!r}")
            return value
        return tuple(value)
    return value


def _section(cls: type, raw, name: str, errors: list[str]):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errors.append(f"{name}: expected a mapping")
        return cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            errors.append(f"{name}.{key}: unknown key")
    proto = cls()
    kwargs = {}
    for key, val in raw.items():
        if key in known:
            n_err = len(errors)
            kwargs[key] = _coerce(val, getattr(proto, key), f"{name}.{key}", errors)
            if len(errors) > n_err:
                kwargs.pop(key)
    try:
        return cls(**kwargs)
    except (ConfigurationError, ValueError, TypeError) as exc:
        errors.append(f"{name}: {exc}")
        return proto


def config_from_dict(raw: dict, base_dir: str = ".", check_paths: bool = True) -> RunConfig:
    """Build a ``RunConfig``; every problem found is reported in one error."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    for key in raw:
        if key not in SECTIONS and key not in ("schema_version", "seed"):
            errors.append(f"{key}: unknown top-level key")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"seed: expected a non-negative integer, got {seed!r}")
        seed = 0
    sections = {name: _section(cls, raw.get(name), name, errors) for name, cls in SECTIONS.items()}
    cfg = RunConfig(seed=seed, base_dir=str(base_dir), **sections)
    if check_paths:
        for key in ("dataset", "templates"):
            p = cfg.resolve(getattr(cfg.run, key))
            if p is not None and not p.is_file():
                errors.append(f"run.{key}: file not found: {p}")
    if cfg.task.scores_pauses is False and cfg.reward.alpha_pro != 0 and cfg.run.templates is None:
        errors.append(f"reward.alpha_pro: task {cfg.task.name!r} has no pause templates; set alpha_pro to 0")
    if errors:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(raw, base_dir=str(path.parent), check_paths=check_paths)

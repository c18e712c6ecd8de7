"""Group rollouts, clipped surrogate with reference KL, and the Adam update."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import RewardBreakdown, RewardConfig, RolloutGroup, Text, Trajectory, normalize_group_advantages
from .errors import ConfigurationError, MrgrpoError, RewardComputationError, TrainingError
from .policy import (
    PolicyParams,
    SamplerConfig,
    build_contexts,
    member_rng,
    rollout_batch,
    token_logprobs,
    weighted_logprob_grad,
)
from .prosody import DEFAULT_THRESHOLDS, PW_MAX_LEVEL, PauseTemplateSet
from .rewards import score_trajectory
from .sim_env import EnvConfig, ReferencePair, synthesize

# importance ratios are clamped to [1e-6, 1e6]
LOG_RATIO_BOUND = math.log(1e6)


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 12
    batch_size: int = 16
    learning_rate: float = 1e-6
    clip_epsilon: float = 0.2
    kl_coef: float = 0.01
    epochs_per_batch: int = 1
    total_steps: int = 100
    length_norm: bool = True
    # 0 keeps the initial reference policy for the whole run
    ref_refresh_interval: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.group_size < 2:
            raise ConfigurationError("grpo.group_size must be >= 2")
        if self.batch_size < 1:
            raise ConfigurationError("grpo.batch_size must be >= 1")
        if not 0 < self.clip_epsilon < 1:
            raise ConfigurationError("grpo.clip_epsilon must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ConfigurationError("grpo.learning_rate must be > 0")
        if self.kl_coef < 0:
            raise ConfigurationError("grpo.kl_coef must be >= 0")
        if self.epochs_per_batch < 1:
            raise ConfigurationError("grpo.epochs_per_batch must be >= 1")
        if self.total_steps < 0 or self.ref_refresh_interval < 0:
            raise ConfigurationError("grpo.total_steps and grpo.ref_refresh_interval must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigurationError("bad Adam constants")


@dataclass(frozen=True, eq=False)
class PromptTriple:
    """Target text, its reference speech, and (optionally) its pause templates."""

    text_id: str
    text: Text
    ref: ReferencePair
    templates: PauseTemplateSet | None = None


@dataclass(frozen=True)
class TrainSetup:
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    pw_max_level: int = PW_MAX_LEVEL


@dataclass
class TrainerState:
    params: PolicyParams
    ref_params: PolicyParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0
    seed: int = 0

    @classmethod
    def fresh(cls, params: PolicyParams, seed: int = 0) -> "TrainerState":
        z = np.zeros_like(params.theta)
        return cls(params=params, ref_params=params, adam_m=z.copy(), adam_v=z.copy(), step=0, seed=seed)


@dataclass(frozen=True)
class TrainStepReport:
    step: int
    mean_reward: float
    r_intl: float
    r_sim: float
    r_len: float
    r_ent: float
    r_pro: float
    mean_abs_adv: float
    loss: float
    kl: float
    mean_entropy: float
    mean_length: float
    grad_norm: float
    clip_frac: float
    ratio_clamped: int

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# rollouts


def score_members(trajs: Sequence[Trajectory], triple: PromptTriple, setup: TrainSetup, vocab) -> list[RewardBreakdown]:
    """Score every member; any failure fails the group with the member named."""
    out = []
    for i, tr in enumerate(trajs):
        try:
            synth = synthesize(tr.actions, vocab, setup.env)
            out.append(score_trajectory(tr, synth, triple.ref, triple.templates, setup.reward,
                                        setup.thresholds, setup.pw_max_level))
        except RewardComputationError as exc:
            raise RewardComputationError(
                exc.component, f"prompt {triple.text_id!r} member {i} actions={list(tr.actions)}: {exc}"
            ) from exc
        except MrgrpoError as exc:
            raise RewardComputationError("synthesis", f"prompt {triple.text_id!r} member {i}: {exc}") from exc
    return out


def collect_groups(
    params: PolicyParams,
    triples: Sequence[PromptTriple],
    setup: TrainSetup,
    step: int,
    seed: int,
    group_size: int | None = None,
    first_slot: int = 0,
) -> list[RolloutGroup]:
    """Roll out ``group_size`` members per prompt from one frozen snapshot.

    Member ``i`` of batch slot ``b`` at training step ``step`` samples from
    ``member_rng(seed, step, b, i)``; all members are advanced as one batch.
    """
    G = group_size or setup.grpo.group_size
    prompts, rngs, refs = [], [], []
    for b, tri in enumerate(triples, start=first_slot):
        for i in range(G):
            prompts.append(tri.text)
            rngs.append(member_rng(seed, step, b, i))
            refs.append(tri.ref.ref_actions)
    trajs = rollout_batch(params, prompts, setup.sampler, rngs, refs)
    groups = []
    for b, tri in enumerate(triples):
        members = trajs[b * G:(b + 1) * G]
        bd = score_members(members, tri, setup, params.arch.vocab)
        rewards = [x.total for x in bd]
        adv = normalize_group_advantages(rewards)
        groups.append(RolloutGroup(tri.text, tuple(members), tuple(rewards), tuple(float(a) for a in adv), tuple(bd)))
    return groups


def collect_group(params: PolicyParams, triple: PromptTriple, G: int, setup: TrainSetup,
                  step: int = 0, seed: int = 0, slot: int = 0) -> RolloutGroup:
    """One prompt's group, drawn from the streams of batch slot ``slot``."""
    return collect_groups(params, [triple], setup, step, seed, G, first_slot=slot)[0]


# --------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class LossStats:
    kl: float
    clip_frac: float
    ratio_clamped: int


def surrogate_loss(
    groups: RolloutGroup | Sequence[RolloutGroup],
    params_new: PolicyParams,
    params_old: PolicyParams,
    params_ref: PolicyParams,
    cfg: GrpoConfig,
    ctx=None,
):
    """Clipped GRPO surrogate with per-token KL to the reference policy.

    ``loss = -mean_groups (1/G) sum_i (1/T_i) sum_t [min(rho*A_i, clip(rho)*A_i) - beta*kl_t]``
    with ``rho = pi_new/pi_old`` and ``kl_t = pi_ref/pi_new - ln(pi_ref/pi_new) - 1``,
    all on the unfiltered softmax. Returns ``(loss, gradient, LossStats)``.
    """
    if isinstance(groups, RolloutGroup):
        groups = [groups]
    arch = params_new.arch
    if not (params_old.arch == arch and params_ref.arch == arch):
        raise ConfigurationError("new/old/reference parameters have different architectures")
    trajs = [t for g in groups for t in g.members]
    if ctx is None:
        ctx = build_contexts(arch, trajs)

    lengths = np.array([len(t) for t in trajs], dtype=np.float64)
    adv_traj = np.array([a for g in groups for a in g.advantages], dtype=np.float64)
    gsize = np.array([g.size for g in groups for _ in g.members], dtype=np.float64)
    coef_traj = 1.0 / (len(groups) * gsize)
    if cfg.length_norm:
        coef_traj = coef_traj / lengths
    coef = coef_traj[ctx.row_traj]
    adv = adv_traj[ctx.row_traj]

    lp_new = token_logprobs(params_new, ctx)
    lp_old = token_logprobs(params_old, ctx)
    lp_ref = token_logprobs(params_ref, ctx)

    log_ratio = lp_new - lp_old
    clamped = np.abs(log_ratio) > LOG_RATIO_BOUND
    rho = np.exp(np.clip(log_ratio, -LOG_RATIO_BOUND, LOG_RATIO_BOUND))
    eps = cfg.clip_epsilon
    unclipped = rho * adv
    clipped = np.clip(rho, 1 - eps, 1 + eps) * adv
    use_unclipped = unclipped <= clipped
    obj = np.where(use_unclipped, unclipped, clipped)

    x = lp_ref - lp_new
    ex = np.exp(x)
    kl = ex - x - 1.0
    term = obj - cfg.kl_coef * kl
    loss = -float(coef @ term)

    d_obj = np.where(use_unclipped & ~clamped, unclipped, 0.0)
    d_term = d_obj - cfg.kl_coef * (1.0 - ex)
    _, grad, _ = weighted_logprob_grad(params_new, ctx, -coef * d_term)

    stats = LossStats(
        kl=float(coef @ kl),
        clip_frac=float(np.mean(~use_unclipped)) if use_unclipped.size else 0.0,
        ratio_clamped=int(clamped.sum()),
    )
    return loss, grad, stats


# --------------------------------------------------------------------------
# update


def adam_update(theta, grad, m, v, t: int, cfg: GrpoConfig):
    """One Adam step (minimisation). ``t`` is the 1-based update count."""
    m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * grad
    v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * grad * grad
    m_hat = m / (1 - cfg.adam_beta1 ** t)
    v_hat = v / (1 - cfg.adam_beta2 ** t)
    return theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps), m, v


def _summarise(step, groups, loss, stats, grad_norm) -> TrainStepReport:
    bds = [b for g in groups for b in g.breakdowns]
    trajs = [t for g in groups for t in g.members]

    def mean(xs):
        return float(np.mean(xs))

    return TrainStepReport(
        step=step,
        mean_reward=mean([b.total for b in bds]),
        r_intl=mean([b.r_intl for b in bds]),
        r_sim=mean([b.r_sim for b in bds]),
        r_len=mean([b.r_len for b in bds]),
        r_ent=mean([b.r_ent for b in bds]),
        r_pro=mean([b.r_pro for b in bds]),
        mean_abs_adv=mean([abs(a) for g in groups for a in g.advantages]),
        loss=float(loss),
        kl=float(stats.kl),
        mean_entropy=mean([np.mean(t.step_entropies) for t in trajs]),
        mean_length=mean([len(t) for t in trajs]),
        grad_norm=float(grad_norm),
        clip_frac=float(stats.clip_frac),
        ratio_clamped=int(stats.ratio_clamped),
    )


def train_step(state: TrainerState, batch: Sequence[PromptTriple], setup: TrainSetup) -> TrainStepReport:
    """Collect one group per prompt, then ``epochs_per_batch`` Adam updates.

    ``state`` is modified only after every update in the step succeeded; a
    non-finite loss or gradient raises ``TrainingError`` and leaves it intact.
    """
    cfg = setup.grpo
    snapshot = state.params
    groups = collect_groups(snapshot, batch, setup, state.step, state.seed)
    trajs = [t for g in groups for t in g.members]
    ctx = build_contexts(snapshot.arch, trajs)

    params, m, v = snapshot, state.adam_m, state.adam_v
    n_updates = state.step * cfg.epochs_per_batch
    first = None
    for epoch in range(cfg.epochs_per_batch):
        loss, grad, stats = surrogate_loss(groups, params, snapshot, state.ref_params, cfg, ctx=ctx)
        grad_norm = float(np.linalg.norm(grad))
        if not (math.isfinite(loss) and math.isfinite(grad_norm)):
            raise TrainingError(f"non-finite loss/gradient at step {state.step} epoch {epoch}")
        if first is None:
            first = (loss, stats, grad_norm)
        theta, m, v = adam_update(params.theta, grad, m, v, n_updates + epoch + 1, cfg)
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"update produced non-finite parameters at step {state.step}")
        params = params.with_theta(theta)

    report = _summarise(state.step, groups, *first)
    state.params, state.adam_m, state.adam_v = params, m, v
    state.step += 1
    return report


def maybe_refresh_reference(state: TrainerState, cfg: GrpoConfig) -> bool:
    """Copy the live policy into the reference slot every ``ref_refresh_interval`` steps."""
    k = cfg.ref_refresh_interval
    if k and state.step and state.step % k == 0:
        state.ref_params = state.params
        return True
    return False

"""Small autoregressive token policy with the vLLM-style decoding stack.

Architecture
------------
The state at step ``t`` is the target text, the reference speech tokens and
the generated prefix. It is summarised by five embedding slots, concatenated
and fed through one ``tanh`` hidden layer to vocabulary logits:

========  =====================================================================
``win``   mean embedding of the last ``window`` tokens of ``[bos] + prefix``
          (left-padded with ``pad``)
``last``  embedding of the most recent token
``align`` embedding of the target grapheme under the read cursor (number of
          graphemes emitted so far); a dedicated END row once the text is used up
``prog``  embedding of the graphemes still to read, clipped to
          ``[-progress_clip, progress_clip]``
``ref``   mean embedding of the reference speech tokens
========  =====================================================================

Training uses the plain softmax of these logits; only sampling applies the
repetition penalty / temperature / top-k / top-p filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Text, Trajectory, Vocab
from .errors import ConfigurationError, InvalidTrajectoryError, SamplingError

SLOTS = ("win", "last", "align", "prog", "ref")

# SeedSequence tag separating rollout streams from other consumers of the run seed.
ROLLOUT_STREAM = 0x5A11


@dataclass(frozen=True)
class PolicyArch:
    vocab: Vocab = field(default_factory=Vocab)
    window: int = 8
    embed_dim: int = 8
    hidden_dim: int = 32
    progress_clip: int = 8

    def __post_init__(self):
        for name in ("window", "embed_dim", "hidden_dim", "progress_clip"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"model.{name} must be >= 1")

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    def shapes(self) -> dict[str, tuple[int, ...]]:
        V, D, H = self.vocab.size, self.embed_dim, self.hidden_dim
        return {
            "E_win": (V, D),
            "E_last": (V, D),
            "E_align": (self.vocab.n_graphemes + 1, D),
            "E_prog": (2 * self.progress_clip + 1, D),
            "E_ref": (V, D),
            "W1": (H, len(SLOTS) * D),
            "b1": (H,),
            "W2": (V, H),
            "b2": (V,),
        }

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def to_dict(self) -> dict:
        return {
            "graphemes": self.vocab.graphemes,
            "n_styles": self.vocab.n_styles,
            "window": self.window,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "progress_clip": self.progress_clip,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyArch":
        return cls(
            vocab=Vocab(graphemes=d["graphemes"], n_styles=int(d["n_styles"])),
            window=int(d["window"]),
            embed_dim=int(d["embed_dim"]),
            hidden_dim=int(d["hidden_dim"]),
            progress_clip=int(d["progress_clip"]),
        )


@dataclass(frozen=True, eq=False)
class PolicyParams:
    arch: PolicyArch
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        if theta.ndim != 1 or theta.size != self.arch.n_params:
            raise ConfigurationError(
                f"parameter vector has {theta.size} entries, architecture needs {self.arch.n_params}"
            )
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def views(self) -> dict[str, np.ndarray]:
        out, i = {}, 0
        for name, shape in self.arch.shapes().items():
            n = int(np.prod(shape))
            out[name] = self.theta[i:i + n].reshape(shape)
            i += n
        return out

    def with_theta(self, theta: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.arch, theta)


def init_params(arch: PolicyArch, seed: int = 0, scale: float = 0.1) -> PolicyParams:
    """Random initialisation giving a near-uniform initial token distribution."""
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in arch.shapes().items():
        if name.startswith("E_"):
            w = rng.normal(0.0, 1.0, shape)
        elif name == "W1":
            w = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), shape)
        elif name == "W2":
            w = rng.normal(0.0, scale / np.sqrt(shape[1]), shape)
        else:
            w = np.zeros(shape)
        parts.append(w.ravel())
    return PolicyParams(arch, np.concatenate(parts))


def zero_params(arch: PolicyArch) -> PolicyParams:
    return PolicyParams(arch, np.zeros(arch.n_params))


@dataclass(frozen=True)
class SamplerConfig:
    top_k: int = 75
    top_p: float = 0.9
    temperature: float = 1.1
    repetition_penalty: float = 1.1
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigurationError("sampler.top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ConfigurationError("sampler.top_p must lie in (0, 1]")
        if not self.temperature > 0:
            raise ConfigurationError("sampler.temperature must be > 0")
        if not self.repetition_penalty >= 1:
            raise ConfigurationError("sampler.repetition_penalty must be >= 1")
        if self.max_len < 1:
            raise ConfigurationError("sampler.max_len must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("sampler.seed must be unsigned")


def member_rng(seed: int, step: int, group: int, member: int) -> np.random.Generator:
    """Independent PCG64 stream for one group member at one training step."""
    ss = np.random.SeedSequence([int(seed), ROLLOUT_STREAM, int(step), int(group), int(member)])
    return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------------
# forward pass


@dataclass
class Contexts:
    """Slot indices for a batch of decision rows (one row per generated token)."""

    win: np.ndarray        # (N, W)
    last: np.ndarray       # (N,)
    align: np.ndarray      # (N,)
    prog: np.ndarray       # (N,)
    ref_bag: np.ndarray    # (n_traj, V) normalised reference token counts
    row_traj: np.ndarray   # (N,) trajectory index of each row
    actions: np.ndarray    # (N,) action taken at each row (-1 when unknown)

    @property
    def n_rows(self) -> int:
        return self.last.shape[0]


def _ref_bag(vocab_size: int, ref_actions: Sequence[Sequence[int]]) -> np.ndarray:
    bag = np.zeros((len(ref_actions), vocab_size))
    for i, ref in enumerate(ref_actions):
        if len(ref):
            np.add.at(bag[i], np.asarray(ref, dtype=np.int64), 1.0 / len(ref))
    return bag


def _progress_index(arch: PolicyArch, remaining: np.ndarray) -> np.ndarray:
    p = arch.progress_clip
    return np.clip(remaining, -p, p) + p


def _trajectory_rows(arch: PolicyArch, text: Text, actions: Sequence[int]):
    vocab = arch.vocab
    W = arch.window
    acts = np.asarray(actions, dtype=np.int64)
    T = acts.size
    seq = np.concatenate([np.full(W - 1, vocab.pad), [vocab.bos], acts]).astype(np.int64)
    win = np.lib.stride_tricks.sliding_window_view(seq, W)[:T].copy()
    last = win[:, -1].copy()
    is_graph = vocab.symbol_table()[acts] >= 0 if T else np.zeros(0, bool)
    cursor = np.concatenate([[0], np.cumsum(is_graph)[:-1]]).astype(np.int64) if T else np.zeros(0, np.int64)
    sym = np.asarray(text.symbols, dtype=np.int64)
    L = sym.size
    align = np.where(cursor < L, sym[np.minimum(cursor, max(L - 1, 0))] if L else vocab.n_graphemes,
                     vocab.n_graphemes)
    prog = _progress_index(arch, L - cursor)
    return win, last, align, prog, acts


def build_contexts(arch: PolicyArch, trajectories: Sequence[Trajectory]) -> Contexts:
    parts = [_trajectory_rows(arch, t.prompt, t.actions) for t in trajectories]
    return Contexts(
        win=np.concatenate([p[0] for p in parts]),
        last=np.concatenate([p[1] for p in parts]),
        align=np.concatenate([p[2] for p in parts]),
        prog=np.concatenate([p[3] for p in parts]),
        ref_bag=_ref_bag(arch.vocab_size, [t.ref_actions for t in trajectories]),
        row_traj=np.concatenate([np.full(len(t), i, dtype=np.int64) for i, t in enumerate(trajectories)]),
        actions=np.concatenate([p[4] for p in parts]),
    )


def _forward(views: dict, ctx: Contexts):
    ref_vec = (ctx.ref_bag @ views["E_ref"])[ctx.row_traj]
    x = np.concatenate(
        [
            views["E_win"][ctx.win].mean(axis=1),
            views["E_last"][ctx.last],
            views["E_align"][ctx.align],
            views["E_prog"][ctx.prog],
            ref_vec,
        ],
        axis=1,
    )
    h = np.tanh(x @ views["W1"].T + views["b1"])
    z = h @ views["W2"].T + views["b2"]
    return x, h, z


def batch_logits(params: PolicyParams, ctx: Contexts) -> np.ndarray:
    return _forward(params.views(), ctx)[2]


def logits(params: PolicyParams, prompt: Text, prefix: Sequence[int], ref_actions: Sequence[int] = ()) -> np.ndarray:
    """Vocabulary logits for the next token after ``prefix``."""
    arch = params.arch
    # appending a dummy action and keeping the last row gives the state after prefix
    win, last, align, prog, _ = _trajectory_rows(arch, prompt, list(prefix) + [arch.vocab.pad])
    ctx = Contexts(
        win=win[-1:], last=last[-1:], align=align[-1:], prog=prog[-1:],
        ref_bag=_ref_bag(arch.vocab_size, [ref_actions]),
        row_traj=np.zeros(1, dtype=np.int64), actions=np.full(1, -1),
    )
    return batch_logits(params, ctx)[0]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def token_logprobs(params: PolicyParams, ctx: Contexts) -> np.ndarray:
    """Unfiltered log pi(a_t | s_t) for every row of ``ctx``."""
    z = batch_logits(params, ctx)
    return _log_softmax(z)[np.arange(ctx.n_rows), ctx.actions]


def weighted_logprob_grad(params: PolicyParams, ctx: Contexts, weights: np.ndarray):
    """Return ``(sum_t w_t log pi(a_t|s_t), gradient, per-row logprobs)``."""
    arch = params.arch
    views = params.views()
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (ctx.n_rows,):
        raise ConfigurationError(f"expected {ctx.n_rows} weights, got shape {w.shape}")
    x, h, z = _forward(views, ctx)
    logp = _log_softmax(z)
    rows = np.arange(ctx.n_rows)
    lp = logp[rows, ctx.actions]
    value = float(w @ lp)

    dz = -np.exp(logp) * w[:, None]
    dz[rows, ctx.actions] += w
    g = {}
    g["W2"] = dz.T @ h
    g["b2"] = dz.sum(axis=0)
    da = (dz @ views["W2"]) * (1.0 - h * h)
    g["W1"] = da.T @ x
    g["b1"] = da.sum(axis=0)
    dx = da @ views["W1"]
    D = arch.embed_dim
    d_win, d_last, d_align, d_prog, d_ref = (dx[:, i * D:(i + 1) * D] for i in range(len(SLOTS)))

    g["E_win"] = np.zeros_like(views["E_win"])
    np.add.at(g["E_win"], ctx.win, np.repeat(d_win[:, None, :] / arch.window, arch.window, axis=1))
    for name, idx, d in (("E_last", ctx.last, d_last), ("E_align", ctx.align, d_align), ("E_prog", ctx.prog, d_prog)):
        g[name] = np.zeros_like(views[name])
        np.add.at(g[name], idx, d)
    per_traj = np.zeros((ctx.ref_bag.shape[0], D))
    np.add.at(per_traj, ctx.row_traj, d_ref)
    g["E_ref"] = ctx.ref_bag.T @ per_traj

    grad = np.concatenate([g[name].ravel() for name in arch.shapes()])
    return value, grad, lp


def logprob_and_grad(params: PolicyParams, traj: Trajectory, per_token_weights: Sequence[float]):
    """``sum_t w_t * log pi(a_t|s_t)`` under the unfiltered softmax, and its gradient."""
    w = np.asarray(per_token_weights, dtype=np.float64)
    if w.shape != (len(traj),):
        raise ConfigurationError(f"need {len(traj)} weights, got shape {w.shape}")
    value, grad, _ = weighted_logprob_grad(params, build_contexts(params.arch, [traj]), w)
    return value, grad


# --------------------------------------------------------------------------
# sampling


def filtered_distribution(logits_: np.ndarray, history_mask: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Row-wise sampling distribution after penalty, temperature, top-k, top-p.

    ``logits_`` is ``(N, V)`` (or ``(V,)``); ``history_mask`` flags tokens already
    generated. Ties at the top-k / top-p boundary keep the lower token id.
    """
    z = np.array(logits_, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    hist = np.atleast_2d(np.asarray(history_mask, dtype=bool))
    if np.isnan(z).any():
        raise SamplingError("NaN in logits")
    posinf = np.isposinf(z)
    if posinf.any():
        rows = posinf.any(axis=1)
        z[rows] = np.where(posinf[rows], 0.0, -np.inf)
    if np.isneginf(z).all(axis=1).any():
        raise SamplingError("every logit is -inf")
    if cfg.repetition_penalty != 1.0:
        rp = cfg.repetition_penalty
        z = np.where(hist, np.where(z > 0, z / rp, z * rp), z)
    z = z / cfg.temperature

    N, V = z.shape
    k = min(cfg.top_k, V)
    order = np.argsort(-z, axis=1, kind="stable")[:, :k]
    zs = np.take_along_axis(z, order, axis=1)
    p = np.exp(zs - zs[:, :1])
    p /= p.sum(axis=1, keepdims=True)
    before = np.cumsum(p, axis=1) - p
    p = np.where(before < cfg.top_p, p, 0.0)
    p /= p.sum(axis=1, keepdims=True)
    q = np.zeros((N, V))
    np.put_along_axis(q, order, p, axis=1)
    return q[0] if single else q


def _entropy(q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(q > 0, q * np.log(q), 0.0)
    return np.maximum(-t.sum(axis=-1), 0.0)


def _draw(q: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row, scanning tokens in descending-probability order."""
    order = np.argsort(-q, axis=1, kind="stable")
    qs = np.take_along_axis(q, order, axis=1)
    cum = np.cumsum(qs, axis=1)
    idx = (cum <= u[:, None] * cum[:, -1:]).sum(axis=1)
    last_pos = (qs > 0).sum(axis=1) - 1
    idx = np.minimum(idx, last_pos)
    return order[np.arange(q.shape[0]), idx]


def sample_step(logits_: np.ndarray, history: Sequence[int], cfg: SamplerConfig, rng: np.random.Generator):
    """Draw one token. Returns ``(token, ln q(token), entropy of q in nats)``."""
    z = np.asarray(logits_, dtype=np.float64)
    hist = np.zeros(z.shape[0], dtype=bool)
    if len(history):
        hist[np.asarray(history, dtype=np.int64)] = True
    q = filtered_distribution(z[None, :], hist[None, :], cfg)
    tok = int(_draw(q, np.array([rng.random()]))[0])
    return tok, float(np.log(q[0, tok])), float(_entropy(q)[0])


def rollout_batch(
    params: PolicyParams,
    prompts: Sequence[Text],
    cfg: SamplerConfig,
    rngs: Sequence[np.random.Generator],
    ref_actions: Sequence[Sequence[int]] | None = None,
) -> list[Trajectory]:
    """Generate one trajectory per prompt, all rows advanced together.

    Each member consumes exactly ``cfg.max_len`` uniforms from its own stream,
    so a member's trajectory does not depend on how long the others run.
    """
    arch = params.arch
    vocab = arch.vocab
    n = len(prompts)
    if len(rngs) != n:
        raise ConfigurationError("need one rng per prompt")
    if any(len(p) == 0 for p in prompts):
        raise ConfigurationError("prompts must be non-empty")
    refs = [tuple(r) for r in ref_actions] if ref_actions is not None else [()] * n
    views = params.views()
    table = vocab.symbol_table()
    uniforms = np.stack([g.random(cfg.max_len) for g in rngs])
    # structural tokens are never generated
    banned = [vocab.pad, vocab.bos]

    lengths = np.array([len(p) for p in prompts])
    text = np.full((n, lengths.max()), 0, dtype=np.int64)
    for i, p in enumerate(prompts):
        text[i, :len(p)] = p.symbols
    ref_bag = _ref_bag(arch.vocab_size, refs)

    win = np.full((n, arch.window), vocab.pad, dtype=np.int64)
    win[:, -1] = vocab.bos
    cursor = np.zeros(n, dtype=np.int64)
    hist = np.zeros((n, arch.vocab_size), dtype=bool)
    alive = np.ones(n, dtype=bool)
    acts = np.full((n, cfg.max_len), -1, dtype=np.int64)
    lps = np.zeros((n, cfg.max_len))
    ents = np.zeros((n, cfg.max_len))
    T = np.zeros(n, dtype=np.int64)

    for t in range(cfg.max_len):
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            break
        c = cursor[rows]
        L = lengths[rows]
        ctx = Contexts(
            win=win[rows], last=win[rows, -1],
            align=np.where(c < L, text[rows, np.minimum(c, L - 1)], vocab.n_graphemes),
            prog=_progress_index(arch, L - c),
            ref_bag=ref_bag[rows], row_traj=np.arange(rows.size), actions=np.full(rows.size, -1),
        )
        z = _forward(views, ctx)[2]
        z[:, banned] = -np.inf
        q = filtered_distribution(z, hist[rows], cfg)
        tok = _draw(q, uniforms[rows, t])
        ar = np.arange(rows.size)
        acts[rows, t] = tok
        lps[rows, t] = np.log(q[ar, tok])
        ents[rows, t] = _entropy(q)
        T[rows] = t + 1
        hist[rows, tok] = True
        win[rows] = np.concatenate([win[rows, 1:], tok[:, None]], axis=1)
        cursor[rows] += table[tok] >= 0
        alive[rows] = tok != vocab.eos

    return [
        Trajectory(
            prompt=prompts[i],
            actions=tuple(int(a) for a in acts[i, :T[i]]),
            step_logprobs=tuple(float(v) for v in lps[i, :T[i]]),
            step_entropies=tuple(float(v) for v in ents[i, :T[i]]),
            terminated_by_eos=bool(acts[i, T[i] - 1] == vocab.eos),
            ref_actions=refs[i],
        )
        for i in range(n)
    ]


def rollout(
    params: PolicyParams,
    prompt: Text,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    ref_actions: Sequence[int] = (),
) -> Trajectory:
    """Sample until ``eos`` or ``cfg.max_len`` tokens (``pad``/``bos`` are never drawn)."""
    return rollout_batch(params, [prompt], cfg, [rng], [ref_actions])[0]


def mean_entropy(traj: Trajectory) -> float:
    if len(traj.step_entropies) == 0:
        raise InvalidTrajectoryError("empty trajectory has no mean entropy")
    return float(np.mean(traj.step_entropies))

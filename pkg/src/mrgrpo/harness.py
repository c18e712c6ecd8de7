"""Training, evaluation, ablation and scaling runs driven by a ``RunConfig``.

Output directory of a training run::

    config.yaml      the resolved configuration
    metrics.jsonl    one record per train step (TrainStepReport field order)
    evals.jsonl      evaluation records (step 0, every run.eval_interval, final)
    checkpoints/     step-XXXXXXXX.ckpt
    summary.json     final summary

Every file is a pure function of the config and seed; nothing time-dependent
is written, so two identical runs produce byte-identical outputs.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import jsonschema
import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .core import RewardConfig
from .errors import CalibrationError, ConfigurationError, DatasetError
from .grpo import PromptTriple, TrainerState, TrainSetup, maybe_refresh_reference, score_members, train_step
from .policy import PolicyParams, init_params, rollout_batch
from .pretrain import pretrain
from .rewards import nearest_rank
from .tasks import build_triples, load_triples

log = logging.getLogger("mrgrpo")

_EVAL_STREAM = 0xE7A1
_BATCH_STREAM = 0xBA7C
_CALIB_STREAM = 0xCA1B

DESK_SCALE_NOTE = (
    "desk-scale synthetic environment; absolute values are not comparable "
    "to large-model speech results"
)


# --------------------------------------------------------------------------
# data and initial policy


def training_triples(cfg: RunConfig) -> list[PromptTriple]:
    vocab = cfg.model.vocab()
    if cfg.run.dataset is not None:
        return load_triples(cfg.resolve(cfg.run.dataset), vocab, cfg.env, cfg.resolve(cfg.run.templates))
    return build_triples(cfg.task, vocab, cfg.env)


def heldout_triples(cfg: RunConfig, count: int, seed: int) -> list[PromptTriple]:
    spec = dataclasses.replace(cfg.task, prompt_count=count, seed=seed)
    return build_triples(spec, cfg.model.vocab(), cfg.env)


def eval_triples(cfg: RunConfig) -> list[PromptTriple]:
    """The shared evaluation set: fresh prompts of the configured task drawn from ``run.eval_seed``."""
    return heldout_triples(cfg, cfg.run.eval_count, cfg.run.eval_seed)


def initial_params(cfg: RunConfig, seed: int | None = None, hidden_dim: int | None = None) -> PolicyParams:
    seed = cfg.seed if seed is None else seed
    params = init_params(cfg.model.arch(hidden_dim), seed, cfg.model.init_scale)
    params, _ = pretrain(params, cfg.pretrain)
    return params


# --------------------------------------------------------------------------
# evaluation


def _eval_rngs(seed: int, n: int):
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _EVAL_STREAM, i]))) for i in range(n)]


def _rollout_and_score(params, triples, setup: TrainSetup, rngs):
    trajs = rollout_batch(params, [t.text for t in triples], setup.sampler, rngs,
                          [t.ref.ref_actions for t in triples])
    bds = [score_members([tr], tri, setup, params.arch.vocab)[0] for tr, tri in zip(trajs, triples)]
    return trajs, bds


def evaluate(params: PolicyParams, triples: Sequence[PromptTriple], setup: TrainSetup) -> dict:
    """One sampled rollout per prompt with the eval sampler seed (``sampler.seed``).

    ``cer`` is the mean of ``1 - R_intl``; ``pause_rate`` averages ``R_pro``
    over prompts that have templates (null when none do); ``composite`` is the
    mean total reward under ``setup.reward``.
    """
    if not triples:
        raise DatasetError("evaluation set is empty")
    trajs, bds = _rollout_and_score(params, triples, setup, _eval_rngs(setup.sampler.seed, len(triples)))
    with_tpl = [b.r_pro for b, t in zip(bds, triples) if t.templates is not None]
    return {
        "cer": float(np.mean([1.0 - b.r_intl for b in bds])),
        "sim": float(np.mean([b.r_sim for b in bds])),
        "len_rate": float(np.mean([b.r_len for b in bds])),
        "pause_rate": float(np.mean(with_tpl)) if with_tpl else None,
        "entropy": float(np.mean([np.mean(t.step_entropies) for t in trajs])),
        "mean_length": float(np.mean([len(t) for t in trajs])),
        "composite": float(np.mean([b.total for b in bds])),
    }


def calibrate_h_target(params: PolicyParams, cfg: RunConfig, seed: int | None = None) -> float:
    """Entropy target from rollouts of the initial policy on held-out prompts.

    High-quality samples are those with ``R_intl == 1``; when there are none
    the top quartile by ``R_intl`` is used instead. The target is the
    nearest-rank ``h_target_percentile`` of their mean entropies.
    """
    if cfg.reward.h_target is not None:
        return float(cfg.reward.h_target)
    seed = cfg.seed if seed is None else seed
    triples = heldout_triples(cfg, cfg.run.calibration_count, cfg.run.calibration_seed)
    # h_target only feeds r_ent, which calibration does not look at
    setup = cfg.setup(dataclasses.replace(cfg.reward, h_target=0.0))
    rngs = [np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _CALIB_STREAM, i])))
            for i in range(len(triples))]
    trajs, bds = _rollout_and_score(params, triples, setup, rngs)
    scored = sorted(zip([b.r_intl for b in bds], [float(np.mean(t.step_entropies)) for t in trajs]),
                    key=lambda x: -x[0])
    good = [h for r, h in scored if r == 1.0]
    if not good:
        good = [h for _, h in scored[:max(1, len(scored) // 4)]]
        log.info("no calibration rollout is exact; using the top quartile by R_intl")
    if not good:
        raise CalibrationError("calibration produced no trajectories")
    return nearest_rank(good, cfg.reward.h_target_percentile)


# --------------------------------------------------------------------------
# training


def choose_batch(n: int, batch_size: int, seed: int, step: int) -> list[int]:
    """Prompt indices for one step; a pure function of ``(seed, step)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _BATCH_STREAM, step]))
    return [int(i) for i in rng.choice(n, size=batch_size, replace=batch_size > n)]


def _dump(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def _truncate_jsonl(path: Path, keep: Callable[[dict], bool]) -> None:
    if not path.exists():
        return
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    kept = [ln for ln in lines if keep(json.loads(ln))]
    path.write_text("".join(ln + "\n" for ln in kept), encoding="utf-8")


@dataclass
class RunResult:
    state: TrainerState
    h_target: float
    initial_eval: dict
    final_eval: dict
    reports: list
    summary: dict


def _summary(cfg: RunConfig, state: TrainerState, h_target, initial_eval, final_eval, reports) -> dict:
    out = {
        "steps": state.step,
        "seed": state.seed,
        "h_target": h_target,
        "initial_eval": initial_eval,
        "final_eval": final_eval,
    }
    if reports:
        tail = reports[-max(1, len(reports) // 10):]
        out["last10pct"] = {
            k: float(np.mean([r[k] for r in tail]))
            for k in ("mean_reward", "r_intl", "r_sim", "r_len", "r_ent", "r_pro", "mean_entropy", "mean_length")
        }
    return out


def run_training(
    cfg: RunConfig,
    out_dir=None,
    resume=None,
    seed: int | None = None,
    reward: RewardConfig | None = None,
    hidden_dim: int | None = None,
    triples: Sequence[PromptTriple] | None = None,
    evalset: Sequence[PromptTriple] | None = None,
    h_target: float | None = None,
    write: bool = True,
) -> RunResult:
    """Train for ``grpo.total_steps`` steps.

    With ``write`` the run owns ``out_dir`` (default ``run.out_dir``). With
    ``resume`` the trainer state comes from that checkpoint and the metric
    streams are cut back to the checkpoint's step before continuing.
    """
    seed = cfg.seed if seed is None else seed
    triples = list(triples) if triples is not None else training_triples(cfg)
    if not triples:
        raise DatasetError("training set is empty")
    evalset = list(evalset) if evalset is not None else eval_triples(cfg)
    reward = reward or cfg.reward
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.run.out_dir)
    metrics_path, evals_path = out / "metrics.jsonl", out / "evals.jsonl"
    initial_eval = None

    if resume is not None:
        ck = load_checkpoint(resume, expect_arch=cfg.model.arch(hidden_dim))
        state, h_target = ck.state, ck.h_target
        if write:
            _truncate_jsonl(metrics_path, lambda r: r["step"] < state.step)
            _truncate_jsonl(evals_path, lambda r: r["step"] <= state.step)
        log.info("resumed from %s at step %d", resume, state.step)
        if write and evals_path.exists():
            first = evals_path.read_text(encoding="utf-8").splitlines()[:1]
            if first and json.loads(first[0])["step"] == 0:
                initial_eval = {k: v for k, v in json.loads(first[0]).items() if k != "step"}
    else:
        params = initial_params(cfg, seed, hidden_dim)
        if h_target is None:
            h_target = calibrate_h_target(params, dataclasses.replace(cfg, reward=reward), seed)
        state = TrainerState.fresh(params, seed)
        if write:
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
            metrics_path.write_text("", encoding="utf-8")
            evals_path.write_text("", encoding="utf-8")

    setup = cfg.setup(dataclasses.replace(reward, h_target=h_target))
    if state.step == 0:
        initial_eval = evaluate(state.params, evalset, setup)
        if write and resume is None:
            with open(evals_path, "a", encoding="utf-8") as f:
                f.write(_dump({"step": 0, **initial_eval}) + "\n")
            if cfg.run.checkpoint_interval:
                save_checkpoint(out / "checkpoints" / "step-00000000.ckpt", state, h_target)

    total = cfg.grpo.total_steps
    interval = cfg.run.checkpoint_interval
    reports = []
    mf = open(metrics_path, "a", encoding="utf-8") if write else None
    try:
        while state.step < total:
            idx = choose_batch(len(triples), cfg.grpo.batch_size, seed, state.step)
            rep = train_step(state, [triples[i] for i in idx], setup)
            maybe_refresh_reference(state, cfg.grpo)
            reports.append(rep)
            if mf is not None:
                mf.write(_dump(rep.to_dict()) + "\n")
                mf.flush()
                if interval and state.step % interval == 0 and state.step < total:
                    save_checkpoint(out / "checkpoints" / f"step-{state.step:08d}.ckpt", state, h_target)
            if cfg.run.eval_interval and state.step % cfg.run.eval_interval == 0 and state.step < total:
                rec = evaluate(state.params, evalset, setup)
                if write:
                    with open(evals_path, "a", encoding="utf-8") as f:
                        f.write(_dump({"step": state.step, **rec}) + "\n")
            if rep.step % 50 == 0:
                log.info("step %d reward %.4f r_pro %.3f H %.3f", rep.step, rep.mean_reward, rep.r_pro,
                         rep.mean_entropy)
    finally:
        if mf is not None:
            mf.close()

    if total == 0 or state.step == 0:
        final_eval = initial_eval if initial_eval is not None else evaluate(state.params, evalset, setup)
    else:
        final_eval = evaluate(state.params, evalset, setup)
    if write:
        if state.step > 0 and reports:
            with open(evals_path, "a", encoding="utf-8") as f:
                f.write(_dump({"step": state.step, **final_eval}) + "\n")
        save_checkpoint(out / "checkpoints" / f"step-{state.step:08d}.ckpt", state, h_target)
    # the metrics file also covers steps run before a resume
    records = ([json.loads(ln) for ln in metrics_path.read_text(encoding="utf-8").splitlines() if ln.strip()]
               if write else [r.to_dict() for r in reports])
    summary = _summary(cfg, state, h_target, initial_eval, final_eval, records)
    if write:
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return RunResult(state, h_target, initial_eval, final_eval, reports, summary)


def run_eval(cfg: RunConfig, checkpoint=None, dataset=None, templates=None, seed: int | None = None) -> dict:
    """Evaluate a checkpoint (or the initial policy) on a dataset (or the shared eval set)."""
    if checkpoint is not None:
        ck = load_checkpoint(checkpoint, expect_arch=cfg.model.arch())
        params, h_target = ck.state.params, ck.h_target
    else:
        params = initial_params(cfg, seed)
        h_target = calibrate_h_target(params, cfg, seed)
    if dataset is not None:
        triples = load_triples(dataset, cfg.model.vocab(), cfg.env, templates)
    else:
        triples = eval_triples(cfg)
    return evaluate(params, triples, cfg.setup(dataclasses.replace(cfg.reward, h_target=h_target)))


# --------------------------------------------------------------------------
# ablation ladder


RUNGS = (
    ("intl+sim", ("alpha_intl", "alpha_sim")),
    ("+len", ("alpha_intl", "alpha_sim", "alpha_len")),
    ("+ent", ("alpha_intl", "alpha_sim", "alpha_len", "alpha_ent")),
    ("+pro (full)", ("alpha_intl", "alpha_sim", "alpha_len", "alpha_ent", "alpha_pro")),
)
_ALPHAS = ("alpha_intl", "alpha_sim", "alpha_len", "alpha_ent", "alpha_pro")
_METRIC_KEYS = ("cer", "sim", "len_rate", "pause_rate", "entropy", "mean_length", "composite")


def ladder(reward: RewardConfig) -> list[tuple[str, RewardConfig]]:
    """The four cumulative reward sets; inactive terms get weight 0."""
    out = []
    for name, active in RUNGS:
        out.append((name, dataclasses.replace(reward, **{a: getattr(reward, a) if a in active else 0.0
                                                         for a in _ALPHAS})))
    return out


_NUM = {"type": "number"}
_METRICS_SCHEMA = {
    "type": "object",
    "required": list(_METRIC_KEYS),
    "properties": {k: ({"type": ["number", "null"]} if k == "pause_rate" else _NUM) for k in _METRIC_KEYS},
}
ABLATION_SCHEMA = {
    "oneOf": [
        {"type": "object", "required": ["kind", "rungs", "seeds", "task", "note"],
         "properties": {"kind": {"const": "header"}, "rungs": {"type": "array", "minItems": 4, "maxItems": 4}}},
        {"type": "object", "required": ["kind", "rung", "name", "seed", "alphas", "metrics"],
         "properties": {"kind": {"const": "cell"}, "rung": {"type": "integer"}, "metrics": _METRICS_SCHEMA}},
        {"type": "object", "required": ["kind", "rung", "name", "alphas", "metrics"],
         "properties": {"kind": {"const": "rung"}, "rung": {"type": "integer"}, "metrics": _METRICS_SCHEMA}},
    ]
}
SWEEP_SCHEMA = {
    "oneOf": [
        {"type": "object", "required": ["kind", "axis", "scales", "note"], "properties": {"kind": {"const": "header"}}},
        {"type": "object", "required": ["kind", "scale", "seed", "metrics"],
         "properties": {"kind": {"const": "cell"}, "metrics": _METRICS_SCHEMA}},
        {"type": "object", "required": ["kind", "scale", "metrics"],
         "properties": {"kind": {"const": "row"}, "metrics": _METRICS_SCHEMA}},
        {"type": "object", "required": ["kind", "monotone"], "properties": {"kind": {"const": "monotonicity"}}},
    ]
}


def validate_report(path, schema) -> list[dict]:
    """Parse a JSONL report and check every record against ``schema``."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                jsonschema.validate(rec, schema)
            except jsonschema.ValidationError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc.message}") from None
            rows.append(rec)
    return rows


def _mean_metrics(cells: Sequence[dict]) -> dict:
    out = {}
    for k in _METRIC_KEYS:
        vals = [c[k] for c in cells if c[k] is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def _write_rows(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(_dump(r) + "\n" for r in rows), encoding="utf-8")


def run_ablation(cfg: RunConfig, out_path=None) -> list[dict]:
    """Train every rung on every ablation seed; evaluate each with the full reward.

    All cells of one seed share the initial policy, the entropy target and the
    evaluation set, so rungs differ only in which reward terms drive training.
    """
    out_path = Path(out_path) if out_path is not None else cfg.resolve(cfg.run.out_dir) / "ablation.jsonl"
    triples = training_triples(cfg)
    evalset = eval_triples(cfg)
    rungs = ladder(cfg.reward)
    rows: list[dict] = [{"kind": "header", "rungs": [n for n, _ in rungs], "seeds": list(cfg.ablation.seeds),
                         "task": cfg.task.name, "note": DESK_SCALE_NOTE}]
    per_rung: dict[int, list[dict]] = {i: [] for i in range(len(rungs))}
    for seed in cfg.ablation.seeds:
        h_target = calibrate_h_target(initial_params(cfg, seed), cfg, seed)
        full_setup = cfg.setup(dataclasses.replace(cfg.reward, h_target=h_target))
        for i, (name, rcfg) in enumerate(rungs):
            res = run_training(cfg, seed=seed, reward=rcfg, triples=triples, evalset=evalset,
                               h_target=h_target, write=False)
            metrics = evaluate(res.state.params, evalset, full_setup)
            per_rung[i].append(metrics)
            rows.append({"kind": "cell", "rung": i + 1, "name": name, "seed": seed,
                         "alphas": list(rcfg.alphas), "metrics": metrics})
            log.info("ablation seed %d rung %d %s: %s", seed, i + 1, name, metrics)
    for i, (name, rcfg) in enumerate(rungs):
        rows.append({"kind": "rung", "rung": i + 1, "name": name, "alphas": list(rcfg.alphas),
                     "metrics": _mean_metrics(per_rung[i])})
    _write_rows(out_path, rows)
    validate_report(out_path, ABLATION_SCHEMA)
    return rows


# --------------------------------------------------------------------------
# scaling sweep


# direction in which each metric improves (+1 larger is better)
_BETTER = {"cer": -1, "sim": 1, "len_rate": 1, "pause_rate": 1, "composite": 1}


def monotone_flags(rows: Sequence[dict]) -> dict[str, bool]:
    """Per metric: does it improve (weakly) at every step up the scale axis?"""
    flags = {}
    for k, sign in _BETTER.items():
        vals = [r["metrics"][k] for r in rows]
        if any(v is None for v in vals):
            continue
        flags[k] = all(sign * (b - a) >= 0 for a, b in zip(vals, vals[1:]))
    return flags


def run_sweep(cfg: RunConfig, axis: str | None = None, out_path=None) -> list[dict]:
    """Data-scale (training prompt count) or model-scale (hidden width) grid.

    All cells evaluate on the same held-out set with the same eval sampler seed.
    """
    axis = axis or cfg.sweep.axis
    if axis not in ("data_scale", "model_scale"):
        raise ConfigurationError(f"unknown sweep axis {axis!r}")
    out_path = Path(out_path) if out_path is not None else cfg.resolve(cfg.run.out_dir) / f"sweep-{axis}.jsonl"
    scales = cfg.sweep.data_scales if axis == "data_scale" else cfg.sweep.model_widths
    evalset = eval_triples(cfg)
    rows: list[dict] = [{"kind": "header", "axis": axis, "scales": list(scales), "seeds": list(cfg.sweep.seeds),
                         "eval_seed": cfg.run.eval_seed, "eval_count": len(evalset), "note": DESK_SCALE_NOTE}]
    agg = []
    for scale in scales:
        cells = []
        for seed in cfg.sweep.seeds:
            if axis == "data_scale":
                triples = build_triples(dataclasses.replace(cfg.task, prompt_count=scale), cfg.model.vocab(), cfg.env)
                res = run_training(cfg, seed=seed, triples=triples, evalset=evalset, write=False)
            else:
                res = run_training(cfg, seed=seed, hidden_dim=scale, evalset=evalset, write=False)
            cells.append(res.final_eval)
            rows.append({"kind": "cell", "axis": axis, "scale": scale, "seed": seed, "metrics": res.final_eval})
            log.info("sweep %s=%d seed %d: %s", axis, scale, seed, res.final_eval)
        row = {"kind": "row", "axis": axis, "scale": scale, "metrics": _mean_metrics(cells)}
        agg.append(row)
        rows.append(row)
    rows.append({"kind": "monotonicity", "axis": axis, "monotone": monotone_flags(agg)})
    _write_rows(out_path, rows)
    validate_report(out_path, SWEEP_SCHEMA)
    return rows

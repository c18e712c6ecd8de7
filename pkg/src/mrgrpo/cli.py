"""Command-line entry point: ``mrgrpo <command> --config PATH [...]``.

Log verbosity comes from the ``MRGRPO_LOG_LEVEL`` environment variable
(``DEBUG``, ``INFO``, ``WARNING`` ...; default ``WARNING``). Exit status is 0
on success, 2 for configuration/data errors and 1 for failures during a run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .config import SWEEP_AXES, RunConfig, load_config
from .errors import ConfigurationError, DatasetError, MrgrpoError
from .prosody import RandomAnnotator, RuleAnnotator, annotate_texts, write_templates
from .tasks import generate_tasks, read_dataset

LOG_ENV = "MRGRPO_LOG_LEVEL"


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_tasks(args) -> int:
    cfg = _load(args)
    spec = cfg.task if args.seed is None else dataclasses.replace(cfg.task, seed=args.seed)
    paths = generate_tasks(spec, cfg.model.vocab(), args.out or cfg.resolve(cfg.run.out_dir))
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return 0


def cmd_annotate(args) -> int:
    cfg = _load(args)
    records = read_dataset(args.dataset)
    if not records:
        raise DatasetError(f"{args.dataset}: dataset is empty")
    by_id = {}
    skipped = []
    for scheme in sorted({r.scheme for r in records}):
        if args.annotator == "rule":
            ann = RuleAnnotator(scheme=scheme)
        else:
            ann = RandomAnnotator(seed=cfg.seed if args.seed is None else args.seed, scheme=scheme)
        sets, report = annotate_texts([(r.text_id, r.text) for r in records if r.scheme == scheme], ann, args.k)
        by_id.update({s.text_id: s for s in sets})
        skipped += report.skipped
    out = Path(args.out) if args.out else Path(args.dataset).with_name("templates.jsonl")
    write_templates(out, [by_id[r.text_id] for r in records if r.text_id in by_id])
    print(f"templates: {out} ({len(by_id)} written, {len(skipped)} skipped)")
    return 0


def cmd_train(args) -> int:
    from .harness import run_training

    cfg = _load(args)
    res = run_training(cfg, out_dir=args.out, resume=args.resume)
    print(json.dumps(res.summary["final_eval"]))
    return 0


def cmd_ablate(args) -> int:
    from .harness import run_ablation

    cfg = _load(args)
    if args.seed is not None:
        cfg = cfg.replace(ablation__seeds=(args.seed,))
    out = Path(args.out) / "ablation.jsonl" if args.out else None
    rows = run_ablation(cfg, out)
    for r in rows:
        if r["kind"] == "rung":
            print(f"rung {r['rung']} {r['name']}: {json.dumps(r['metrics'])}")
    return 0


def cmd_sweep(args) -> int:
    from .harness import run_sweep

    cfg = _load(args)
    if args.seed is not None:
        cfg = cfg.replace(sweep__seeds=(args.seed,))
    axis = args.axis or cfg.sweep.axis
    out = Path(args.out) / f"sweep-{axis}.jsonl" if args.out else None
    rows = run_sweep(cfg, axis, out)
    print(json.dumps(rows[-1]["monotone"]))
    return 0


def cmd_eval(args) -> int:
    from .harness import run_eval

    cfg = _load(args)
    rec = run_eval(cfg, checkpoint=args.resume, dataset=args.dataset, templates=args.templates)
    line = json.dumps(rec)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrgrpo", description="Multi-reward GRPO on a synthetic speech-token task.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the run seed")
        sp.add_argument("--out", default=None, help=out_help)

    sp = sub.add_parser("gen-tasks", help="write a task dataset (and templates for pause tasks)")
    common(sp, "output folder (default run.out_dir)")
    sp.set_defaults(func=cmd_gen_tasks)

    sp = sub.add_parser("annotate", help="annotate a dataset's texts with pause templates")
    common(sp, "template file (default: templates.jsonl next to the dataset)")
    sp.add_argument("--dataset", required=True, help="dataset JSONL to annotate")
    sp.add_argument("--k", type=int, default=3, help="templates per text")
    sp.add_argument("--annotator", choices=("rule", "random"), default="rule")
    sp.set_defaults(func=cmd_annotate)

    sp = sub.add_parser("train", help="run GRPO training")
    common(sp, "run folder (default run.out_dir)")
    sp.add_argument("--resume", default=None, metavar="CHECKPOINT", help="continue from a checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("ablate", help="cumulative reward ladder")
    common(sp, "report folder (default run.out_dir)")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep", help="data-scale or model-scale grid")
    common(sp, "report folder (default run.out_dir)")
    sp.add_argument("--axis", choices=SWEEP_AXES, default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("eval", help="evaluate a checkpoint (or the initial policy)")
    common(sp, "write the metrics record to this file")
    sp.add_argument("--resume", default=None, metavar="CHECKPOINT", help="checkpoint to evaluate")
    sp.add_argument("--dataset", default=None, help="dataset JSONL (default: the shared eval set)")
    sp.add_argument("--templates", default=None, help="template JSONL for the dataset")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MrgrpoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

"""Synthetic prompt-triple datasets.

Each record pairs a target text with a reference utterance (another text read
by one speaker style, with rule-annotated pauses where punctuation exists).

Dataset file: UTF-8 JSON lines, keys in this order::

    {"text_id": "length_control-00000", "task": "length_control",
     "scheme": "numeric", "text": "abcdea", "ref_text": "fbcad",
     "ref_actions": [12, 8, 9, 7, 10]}

Tasks that score pauses (``pause_match``, ``combined``) also get a template
file written next to the dataset by the rule annotator; their prompts
alternate 1:1 between the ``numeric`` and ``pw-pph`` schemes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Vocab
from .errors import ConfigurationError, DatasetError
from .grpo import PromptTriple
from .prosody import (
    CLAUSE_BREAK,
    NUMERIC,
    PW_PPH,
    SENTENCE_FINAL,
    PauseTemplateSet,
    RuleAnnotator,
    load_templates,
    write_templates,
)
from .sim_env import EnvConfig, make_reference

TASKS = ("length_control", "pause_match", "content_copy", "combined")
PAUSE_TASKS = ("pause_match", "combined")

_TASK_STREAM = 0x7A5C


@dataclass(frozen=True)
class TaskSpec:
    name: str = "combined"
    prompt_count: int = 256
    min_len: int = 10
    max_len: int = 100
    seed: int = 0
    comma_prob: float = 0.15
    template_k: int = 3

    def __post_init__(self):
        if self.name not in TASKS:
            raise ConfigurationError(f"task.name must be one of {TASKS}, got {self.name!r}")
        if self.prompt_count < 1:
            raise ConfigurationError("task.prompt_count must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigurationError(f"task length range [{self.min_len}, {self.max_len}] is empty")
        if not 0 <= self.comma_prob < 1:
            raise ConfigurationError("task.comma_prob must lie in [0, 1)")
        if self.template_k < 1:
            raise ConfigurationError("task.template_k must be >= 1")

    @property
    def scores_pauses(self) -> bool:
        return self.name in PAUSE_TASKS


@dataclass(frozen=True)
class TaskRecord:
    text_id: str
    task: str
    scheme: str
    text: str
    ref_text: str
    ref_actions: tuple[int, ...]

    def to_json(self) -> str:
        return json.dumps({
            "text_id": self.text_id,
            "task": self.task,
            "scheme": self.scheme,
            "text": self.text,
            "ref_text": self.ref_text,
            "ref_actions": list(self.ref_actions),
        }, ensure_ascii=False, separators=(", ", ": "))


def _letters(vocab: Vocab) -> list[str]:
    return [c for c in vocab.graphemes if c not in SENTENCE_FINAL + CLAUSE_BREAK]


def _random_text(rng, spec: TaskSpec, vocab: Vocab, punctuate: bool) -> str:
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    letters = _letters(vocab) or list(vocab.graphemes)
    chars = [letters[i] for i in rng.integers(0, len(letters), n)]
    if punctuate:
        comma = next((c for c in CLAUSE_BREAK if c in vocab.graphemes), None)
        period = next((c for c in SENTENCE_FINAL if c in vocab.graphemes), None)
        if period is not None:
            chars[-1] = period
        if comma is not None:
            for i in range(1, n - 2):
                if chars[i - 1] != comma and rng.random() < spec.comma_prob:
                    chars[i] = comma
    return "".join(chars)


def _spoken(text: str, vocab: Vocab, style: int, pauses) -> tuple[int, ...]:
    """Tokens for ``text`` in one style with pause tokens inserted after positions."""
    at = {m.position: m.label for m in pauses.markers} if pauses is not None else {}
    out = []
    for p in range(len(text) + 1):
        if p in at:
            out.append(vocab.pause_token(int(at[p])))
        if p < len(text):
            out.append(vocab.token(vocab.graphemes.index(text[p]), style))
    return tuple(out)


def make_tasks(spec: TaskSpec, vocab: Vocab) -> tuple[list[TaskRecord], list[PauseTemplateSet]]:
    """Deterministic records (and templates for pause tasks) for ``spec``."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _TASK_STREAM, TASKS.index(spec.name)]))
    punct = spec.scores_pauses
    records, templates = [], []
    for i in range(spec.prompt_count):
        text_id = f"{spec.name}-{i:05d}"
        scheme = (NUMERIC if i % 2 == 0 else PW_PPH) if punct else NUMERIC
        text = _random_text(rng, spec, vocab, punct)
        ref_text = _random_text(rng, spec, vocab, punct)
        style = int(rng.integers(0, vocab.n_styles))
        ref_pauses = RuleAnnotator().annotate(ref_text, k=1)[0] if punct else None
        records.append(TaskRecord(text_id, spec.name, scheme, text, ref_text, _spoken(ref_text, vocab, style, ref_pauses)))
        if punct:
            seqs = RuleAnnotator(scheme=scheme).annotate(text, k=spec.template_k)
            templates.append(PauseTemplateSet(text_id, scheme, tuple(seqs), text=text))
    return records, templates


def write_dataset(path, records: Iterable[TaskRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def generate_tasks(spec: TaskSpec, vocab: Vocab, out_dir) -> dict[str, Path]:
    """Write ``dataset.jsonl`` (and ``templates.jsonl`` for pause tasks) to ``out_dir``."""
    out_dir = Path(out_dir)
    records, templates = make_tasks(spec, vocab)
    paths = {"dataset": out_dir / "dataset.jsonl"}
    write_dataset(paths["dataset"], records)
    if spec.scores_pauses:
        paths["templates"] = out_dir / "templates.jsonl"
        write_templates(paths["templates"], templates)
    return paths


def read_dataset(path) -> list[TaskRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                o = json.loads(line)
                out.append(TaskRecord(str(o["text_id"]), str(o["task"]), str(o.get("scheme", NUMERIC)),
                                      str(o["text"]), str(o["ref_text"]), tuple(int(a) for a in o["ref_actions"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc})") from None
    return out


def to_triples(
    records: Sequence[TaskRecord],
    vocab: Vocab,
    env: EnvConfig = EnvConfig(),
    templates: dict[str, PauseTemplateSet] | None = None,
) -> list[PromptTriple]:
    templates = templates or {}
    out = []
    for r in records:
        ref = make_reference(vocab.encode(r.ref_text), r.ref_actions, vocab, env)
        out.append(PromptTriple(r.text_id, vocab.encode(r.text), ref, templates.get(r.text_id)))
    return out


def load_triples(dataset_path, vocab: Vocab, env: EnvConfig = EnvConfig(), templates_path=None) -> list[PromptTriple]:
    records = read_dataset(dataset_path)
    if not records:
        raise DatasetError(f"{dataset_path}: dataset is empty")
    templates = load_templates(templates_path) if templates_path else None
    return to_triples(records, vocab, env, templates)


def build_triples(spec: TaskSpec, vocab: Vocab, env: EnvConfig = EnvConfig()) -> list[PromptTriple]:
    """In-memory equivalent of ``generate_tasks`` followed by ``load_triples``."""
    records, templates = make_tasks(spec, vocab)
    return to_triples(records, vocab, env, {t.text_id: t for t in templates})

"""Pause templates: offline annotation, template files, online silence mapping.

Two marker schemes share the same machinery:

``numeric``  levels 1..4 (``#1``..``#4``), increasing pause length
``pw-pph``   ``PW`` (prosodic word) and ``PPH`` (prosodic phrase) boundaries

A marker sits at an inter-word position ``p``: the boundary after the
``p``-th symbol of the text (``0`` is before the first symbol).

Template file
-------------
UTF-8, one JSON object per line, keys in this order::

    {"text_id": "t0", "scheme": "numeric", "text": "ab,cd.",
     "patterns": [[[3, 3], [6, 4]], [[1, 1], [3, 3], [6, 4]]]}

Each pattern is a list of ``[position, label]`` pairs; labels are integers for
``numeric`` and the strings ``"PW"``/``"PPH"`` for ``pw-pph``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from .errors import (
    AnnotationMissingError,
    ConfigurationError,
    TemplateParseError,
    TemplateValidationError,
)

log = logging.getLogger(__name__)

NUMERIC = "numeric"
PW_PPH = "pw-pph"
SCHEMES = (NUMERIC, PW_PPH)
LABELS = {NUMERIC: (1, 2, 3, 4), PW_PPH: ("PW", "PPH")}

DEFAULT_THRESHOLDS = (0.05, 0.15, 0.30, 0.50)
# numeric levels up to this value map to PW, above it to PPH
PW_MAX_LEVEL = 2

SENTENCE_FINAL = ".!?"
CLAUSE_BREAK = ",;:"


class PauseMarker(NamedTuple):
    position: int
    label: int | str


@dataclass(frozen=True)
class PauseSequence:
    scheme: str
    markers: tuple[PauseMarker, ...] = ()

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown pause scheme {self.scheme!r}")
        markers = tuple(PauseMarker(int(p), lab) for p, lab in self.markers)
        object.__setattr__(self, "markers", markers)
        allowed = LABELS[self.scheme]
        prev = -1
        for m in markers:
            if m.label not in allowed or isinstance(m.label, bool):
                raise ConfigurationError(f"label {m.label!r} not valid for scheme {self.scheme}")
            if m.position <= prev:
                raise ConfigurationError("marker positions must be strictly increasing")
            prev = m.position

    def __len__(self) -> int:
        return len(self.markers)

    def to_json(self) -> list:
        return [[m.position, m.label] for m in self.markers]


@dataclass(frozen=True)
class PauseTemplateSet:
    text_id: str
    scheme: str
    templates: tuple[PauseSequence, ...]
    text: str = field(default="", compare=False)

    def __post_init__(self):
        unique = tuple(dict.fromkeys(self.templates))
        if not unique:
            raise TemplateValidationError(f"text {self.text_id!r} has no templates")
        for t in unique:
            if t.scheme != self.scheme:
                raise TemplateValidationError(f"text {self.text_id!r}: template scheme {t.scheme} != {self.scheme}")
            if self.text and t.markers and t.markers[-1].position > len(self.text):
                raise TemplateValidationError(f"text {self.text_id!r}: marker beyond end of text")
        object.__setattr__(self, "templates", unique)

    def __contains__(self, seq: PauseSequence) -> bool:
        return seq in self.templates

    def __len__(self) -> int:
        return len(self.templates)


def to_scheme(seq: PauseSequence, scheme: str, pw_max_level: int = PW_MAX_LEVEL) -> PauseSequence:
    """Convert a numeric sequence to ``pw-pph`` (identity when schemes agree)."""
    if seq.scheme == scheme:
        return seq
    if seq.scheme == NUMERIC and scheme == PW_PPH:
        return PauseSequence(PW_PPH, tuple(
            PauseMarker(m.position, "PW" if m.label <= pw_max_level else "PPH") for m in seq.markers
        ))
    raise ConfigurationError(f"cannot convert {seq.scheme} markers to {scheme}")


def map_silences_to_markers(
    silences: Iterable[tuple[int, float]],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    scheme: str = NUMERIC,
    pw_max_level: int = PW_MAX_LEVEL,
) -> PauseSequence:
    """Rule-based mapping of (position, seconds) silences to pause markers.

    A silence of ``d`` seconds gets the largest level ``l`` with
    ``d >= thresholds[l-1]``; silences shorter than ``thresholds[0]`` are
    dropped. Silences reported twice for one position are merged.
    """
    thr = np.asarray(thresholds, dtype=np.float64)
    if thr.shape != (4,) or not np.all(np.diff(thr) > 0):
        raise ConfigurationError(f"thresholds must be 4 strictly ascending values, got {tuple(thresholds)}")
    merged: dict[int, float] = {}
    for pos, d in silences:
        if not d > 0:
            raise ConfigurationError(f"silence durations must be positive, got {d}")
        merged[int(pos)] = merged.get(int(pos), 0.0) + float(d)
    markers = []
    for pos in sorted(merged):
        level = int(np.searchsorted(thr, merged[pos], side="right"))
        if level:
            markers.append(PauseMarker(pos, level))
    return to_scheme(PauseSequence(NUMERIC, tuple(markers)), scheme, pw_max_level)


# --------------------------------------------------------------------------
# template files


def _record(ts: PauseTemplateSet) -> str:
    rec = {
        "text_id": ts.text_id,
        "scheme": ts.scheme,
        "text": ts.text,
        "patterns": [t.to_json() for t in ts.templates],
    }
    return json.dumps(rec, ensure_ascii=False, separators=(", ", ": "))


def write_templates(path, sets: Iterable[PauseTemplateSet]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ts in sets:
            f.write(_record(ts) + "\n")


def _parse_record(obj, path, lineno: int) -> PauseTemplateSet:
    if not isinstance(obj, dict):
        raise TemplateParseError(path, lineno, "record is not an object")
    missing = {"text_id", "scheme", "patterns"} - obj.keys()
    if missing:
        raise TemplateParseError(path, lineno, f"missing keys {sorted(missing)}")
    scheme = obj["scheme"]
    if scheme not in SCHEMES:
        raise TemplateParseError(path, lineno, f"unknown scheme {scheme!r}")
    patterns = obj["patterns"]
    if not isinstance(patterns, list):
        raise TemplateParseError(path, lineno, "patterns must be a list")
    seqs = []
    for pat in patterns:
        try:
            seqs.append(PauseSequence(scheme, tuple(PauseMarker(int(p), lab) for p, lab in pat)))
        except (TypeError, ValueError) as exc:
            raise TemplateParseError(path, lineno, f"bad pattern {pat!r}: {exc}") from None
    try:
        return PauseTemplateSet(str(obj["text_id"]), scheme, tuple(seqs), text=str(obj.get("text", "")))
    except TemplateValidationError as exc:
        raise TemplateValidationError(f"{path}:{lineno}: {exc}") from None


def load_templates(path) -> dict[str, PauseTemplateSet]:
    """Read a template file into ``{text_id: PauseTemplateSet}``.

    Duplicate text ids: the last record wins and a warning is logged.
    """
    out: dict[str, PauseTemplateSet] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TemplateParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
            ts = _parse_record(obj, path, lineno)
            if ts.text_id in out:
                log.warning("%s:%d: duplicate text_id %r, keeping the later record", path, lineno, ts.text_id)
            out[ts.text_id] = ts
    return out


# --------------------------------------------------------------------------
# annotators


class Annotator(Protocol):
    """Proposes plausible pause structures for a text.

    ``exemplars`` are few-shot ``(text, PauseSequence)`` demonstrations.
    Implementations return at least one sequence or raise.
    """

    def annotate(self, text: str, exemplars: Sequence[tuple[str, PauseSequence]], k: int) -> list[PauseSequence]:
        ...


class AnnotationFailed(Exception):
    pass


def _clauses(text: str) -> list[tuple[int, int]]:
    """(start, end) symbol spans between punctuation marks."""
    spans, start = [], 0
    for i, c in enumerate(text):
        if c in SENTENCE_FINAL or c in CLAUSE_BREAK:
            if i > start:
                spans.append((start, i))
            start = i + 1
    if start < len(text):
        spans.append((start, len(text)))
    return spans


@dataclass(frozen=True)
class RuleAnnotator:
    """Deterministic punctuation + clause-length annotator.

    Rule table (numeric scheme):

    * sentence-final punctuation (``.!?``) -> ``#4`` right after it
    * clause punctuation (``,;:``)         -> ``#3`` right after it
    * a clause of ``long_clause`` or more symbols may take a break at its
      midpoint; the alternatives offered are ``#2`` then ``#1`` there

    Candidates, in order: punctuation only, + ``#2`` midpoint breaks,
    + ``#1`` midpoint breaks. The first ``k`` distinct ones are returned,
    converted to ``scheme``.
    """

    long_clause: int = 6
    scheme: str = NUMERIC

    def annotate(self, text, exemplars=(), k=3):
        base = {}
        for i, c in enumerate(text):
            if c in SENTENCE_FINAL:
                base[i + 1] = 4
            elif c in CLAUSE_BREAK:
                base[i + 1] = 3
        mids = [s + (e - s) // 2 for s, e in _clauses(text) if e - s >= self.long_clause]
        candidates = [base]
        for level in (2, 1):
            if mids:
                alt = dict(base)
                alt.update({m: level for m in mids if m not in base})
                candidates.append(alt)
        seqs = []
        for cand in candidates:
            seq = PauseSequence(NUMERIC, tuple(PauseMarker(p, cand[p]) for p in sorted(cand)))
            seq = to_scheme(seq, self.scheme)
            if seq not in seqs:
                seqs.append(seq)
        return seqs[:k]


@dataclass(frozen=True)
class RandomAnnotator:
    """Seeded stochastic stub: random levels at random boundaries."""

    seed: int = 0
    p_break: float = 0.3
    scheme: str = NUMERIC

    def annotate(self, text, exemplars=(), k=3):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, *map(ord, text)]))
        seqs = []
        for _ in range(k):
            markers = tuple(
                PauseMarker(p, int(rng.integers(1, 5)))
                for p in range(1, len(text) + 1)
                if rng.random() < self.p_break
            )
            seq = to_scheme(PauseSequence(NUMERIC, markers), self.scheme)
            if seq not in seqs:
                seqs.append(seq)
        return seqs


def render_marked(text: str, seq: PauseSequence) -> str:
    """Inline form used in prompts, e.g. ``"ab,#3cd.#4"`` or ``"ab,|PPH cd"``."""
    at = {m.position: m.label for m in seq.markers}
    out = []
    for p in range(len(text) + 1):
        if p in at:
            out.append(f"#{at[p]}" if seq.scheme == NUMERIC else f"|{at[p]}|")
        if p < len(text):
            out.append(text[p])
    return "".join(out)


def parse_marked(line: str, text: str, scheme: str) -> PauseSequence:
    """Inverse of ``render_marked``; the stripped line must equal ``text``."""
    markers, plain, i = [], [], 0
    while i < len(line):
        c = line[i]
        if scheme == NUMERIC and c == "#" and i + 1 < len(line) and line[i + 1] in "1234":
            markers.append(PauseMarker(len(plain), int(line[i + 1])))
            i += 2
        elif scheme == PW_PPH and c == "|":
            j = line.index("|", i + 1)
            markers.append(PauseMarker(len(plain), line[i + 1:j]))
            i = j + 1
        else:
            plain.append(c)
            i += 1
    if "".join(plain) != text:
        raise AnnotationFailed(f"annotation {line!r} does not reproduce text {text!r}")
    return PauseSequence(scheme, tuple(markers))


@dataclass
class FewShotLLMAnnotator:
    """Prompt-building adapter around any text-completion callable.

    ``complete`` receives the prompt and returns one annotated text per line.
    No network client is bundled; pass your own function.
    """

    complete: Callable[[str], str]
    scheme: str = NUMERIC

    def build_prompt(self, text, exemplars, k) -> str:
        marks = "#1 (shortest) to #4 (longest)" if self.scheme == NUMERIC else "|PW| and |PPH|"
        lines = [
            f"Insert pause markers {marks} at word boundaries of the text.",
            f"Give {k} different plausible annotations, one per line.",
            "",
        ]
        for ex_text, ex_seq in exemplars:
            lines += [f"Text: {ex_text}", f"Annotated: {render_marked(ex_text, ex_seq)}", ""]
        lines += [f"Text: {text}", "Annotated:"]
        return "\n".join(lines)

    def annotate(self, text, exemplars=(), k=3):
        reply = self.complete(self.build_prompt(text, exemplars, k))
        seqs = []
        for line in reply.splitlines():
            line = line.strip()
            if line.startswith("Annotated:"):
                line = line[len("Annotated:"):].strip()
            if not line:
                continue
            try:
                seq = parse_marked(line, text, self.scheme)
            except (AnnotationFailed, ValueError, ConfigurationError):
                continue
            if seq not in seqs:
                seqs.append(seq)
        if not seqs:
            raise AnnotationFailed(f"no usable annotation for {text!r}")
        return seqs[:k]


@dataclass
class AnnotationReport:
    written: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)


def annotate_texts(
    texts: Sequence[tuple[str, str]],
    annotator: Annotator,
    k: int,
    exemplars: Sequence[tuple[str, PauseSequence]] = (),
) -> tuple[list[PauseTemplateSet], AnnotationReport]:
    """Annotate ``(text_id, text)`` pairs; failures are skipped and listed in the report."""
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    report = AnnotationReport()
    sets = []
    for text_id, text in texts:
        try:
            seqs = annotator.annotate(text, exemplars, k)[:k]
            if not seqs:
                raise AnnotationFailed("annotator returned nothing")
            scheme = seqs[0].scheme
            sets.append(PauseTemplateSet(text_id, scheme, tuple(seqs), text=text))
        except (AnnotationFailed, ConfigurationError, TemplateValidationError) as exc:
            log.warning("annotation skipped for %s: %s", text_id, exc)
            report.skipped.append((text_id, str(exc)))
    report.written = len(sets)
    return sets, report


def annotate_offline(
    texts: Sequence[tuple[str, str]],
    annotator: Annotator,
    k: int,
    path,
    exemplars: Sequence[tuple[str, PauseSequence]] = (),
) -> AnnotationReport:
    """Annotate ``(text_id, text)`` pairs and write a template file."""
    sets, report = annotate_texts(texts, annotator, k, exemplars)
    write_templates(path, sets)
    return report


def require_templates(templates: dict[str, PauseTemplateSet], text_id: str) -> PauseTemplateSet:
    try:
        return templates[text_id]
    except KeyError:
        raise AnnotationMissingError(f"no pause templates for text {text_id!r}") from None

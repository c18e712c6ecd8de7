import pytest

from mrgrpo.core import Vocab
from mrgrpo.errors import ConfigurationError, DatasetError
from mrgrpo.prosody import NUMERIC, PW_PPH, load_templates
from mrgrpo.sim_env import synthesize
from mrgrpo.tasks import TaskSpec, build_triples, generate_tasks, load_triples, make_tasks, read_dataset


def test_byte_identical(tmp_path, vocab):
    spec = TaskSpec(name="combined", prompt_count=10, seed=7)
    a = generate_tasks(spec, vocab, tmp_path / "a")
    b = generate_tasks(spec, vocab, tmp_path / "b")
    for key in ("dataset", "templates"):
        assert a[key].read_bytes() == b[key].read_bytes()


def test_fixed_length(vocab):
    records, _ = make_tasks(TaskSpec(name="length_control", prompt_count=20, min_len=5, max_len=5), vocab)
    assert all(len(r.text) == 5 for r in records)


def test_combined_has_templates(tmp_path, vocab):
    paths = generate_tasks(TaskSpec(name="combined", prompt_count=12, min_len=4, max_len=9), vocab, tmp_path)
    records = read_dataset(paths["dataset"])
    tpl = load_templates(paths["templates"])
    assert [r.text_id for r in records] == list(tpl)
    assert all(len(tpl[r.text_id]) >= 1 for r in records)


def test_schemes_split_evenly(vocab):
    records, templates = make_tasks(TaskSpec(name="pause_match", prompt_count=10, min_len=4, max_len=6), vocab)
    schemes = [r.scheme for r in records]
    assert schemes.count(NUMERIC) == schemes.count(PW_PPH) == 5
    assert [t.scheme for t in templates] == schemes


def test_no_templates_for_length_task(tmp_path, vocab):
    paths = generate_tasks(TaskSpec(name="length_control", prompt_count=3, min_len=4, max_len=6), vocab, tmp_path)
    assert "templates" not in paths
    assert all(t.templates is None for t in load_triples(paths["dataset"], vocab))


def test_reference_speech_transcribes_to_ref_text(vocab):
    records, _ = make_tasks(TaskSpec(name="combined", prompt_count=6, min_len=4, max_len=8), vocab)
    for r in records:
        assert vocab.decode(synthesize(r.ref_actions, vocab).transcript) == r.ref_text


def test_pause_texts_end_with_period(vocab):
    records, _ = make_tasks(TaskSpec(name="pause_match", prompt_count=6, min_len=4, max_len=8), vocab)
    assert all(r.text.endswith(".") for r in records)


def test_in_memory_matches_files(tmp_path, vocab):
    spec = TaskSpec(name="pause_match", prompt_count=5, min_len=4, max_len=6)
    paths = generate_tasks(spec, vocab, tmp_path)
    a = build_triples(spec, vocab)
    b = load_triples(paths["dataset"], vocab, templates_path=paths["templates"])
    for x, y in zip(a, b):
        assert x.text == y.text and x.ref.r_ref == y.ref.r_ref and x.templates == y.templates


def test_empty_and_malformed(tmp_path, vocab):
    p = tmp_path / "d.jsonl"
    p.write_text("")
    with pytest.raises(DatasetError):
        load_triples(p, vocab)
    p.write_text('{"text_id": "a"}\n')
    with pytest.raises(DatasetError):
        read_dataset(p)


@pytest.mark.parametrize("kw", [dict(name="other"), dict(prompt_count=0), dict(min_len=5, max_len=4),
                                dict(comma_prob=1.0), dict(template_k=0)])
def test_invalid_task_settings(kw):
    with pytest.raises(ConfigurationError):
        TaskSpec(**kw)


def test_default_length_range():
    spec = TaskSpec()
    assert (spec.min_len, spec.max_len) == (10, 100)


def test_works_without_punctuation():
    v = Vocab(graphemes="ab", n_styles=1)
    records, templates = make_tasks(TaskSpec(name="combined", prompt_count=3, min_len=3, max_len=4), v)
    assert len(records) == 3 and all(len(t) >= 1 for t in templates)

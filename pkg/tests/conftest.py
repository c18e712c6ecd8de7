import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def vocab():
    from mrgrpo.core import Vocab

    return Vocab()


@pytest.fixture
def small_arch(vocab):
    from mrgrpo.policy import PolicyArch

    # 325 parameters, small enough for finite-difference checks
    return PolicyArch(vocab=vocab, window=3, embed_dim=2, hidden_dim=4, progress_clip=2)


@pytest.fixture
def configs_dir():
    return ROOT / "configs"


TINY = """\
schema_version: 1
seed: 0
model: {window: 4, embed_dim: 4, hidden_dim: 8, progress_clip: 4}
pretrain: {steps: 5, batch_size: 8, corpus_size: 16}
sampler: {max_len: 12, seed: 0}
grpo: {group_size: 4, batch_size: 2, learning_rate: 0.01, total_steps: 6}
task: {name: combined, prompt_count: 8, min_len: 3, max_len: 5}
run: {out_dir: out, checkpoint_interval: 3, eval_count: 4, calibration_count: 4}
ablation: {seeds: [0]}
sweep: {data_scales: [2, 4], model_widths: [4, 8], seeds: [0]}
"""


@pytest.fixture
def tiny_config(tmp_path):
    """Path to a seconds-scale run config writing under ``tmp_path/out``."""
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line for the acceptance summary and print it."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

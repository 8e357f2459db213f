"""Shared test fixtures and the acceptance-summary reporting hook."""

from __future__ import annotations

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

# One line per acceptance criterion, echoed after the test summary so the
# pass/fail verdicts are visible in a plain `pytest -v` run.
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    line = f"[criterion {number}] {verdict} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_corpus(tmp_path):
    """A small labeled corpus on disk: 400 lines, seeded, ~2% anomalies."""
    from logmilp.synthgen import SynthSpec, generate

    path = tmp_path / "tiny.log"
    labels = generate(SynthSpec(seed=3, n_lines=400, anomaly_rate=0.05), path)
    return path, labels

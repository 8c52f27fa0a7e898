import numpy as np
import pytest
import torch

from tricyclegan.config import apply_overrides, profile

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Small, fast training configuration for unit tests (64px, narrow nets)."""
    return apply_overrides(
        profile("toy"),
        {
            "base_width": 8,
            "depth": 3,
            "batch_size": 4,
            "pretrain_epochs": 1,
            "max_epochs": 2,
            "finetune_epochs": 1,
            "baseline_epochs": 1,
        },
    )


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def report(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)

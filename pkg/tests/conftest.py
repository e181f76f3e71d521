from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from lpmallows.data import build_regimes
from lpmallows.synthetic import DgpConfig, generate_dgp

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "lpmallows" / "data"


def write_csv(path: Path, text: str) -> Path:
    path.write_text(text.strip() + "\n")
    return path


@pytest.fixture(scope="session")
def lab_panel():
    """Model A truth, moderate size; shared by the projection and inference tests."""
    panel, truth = generate_dgp(DgpConfig(true_form="A", T=150, seed=5))
    return panel, build_regimes(panel, "rate"), truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

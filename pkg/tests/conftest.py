import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ambclte.lte import CellConfig  # noqa: E402

_ACCEPTANCE: dict[str, str] = {}


def record_acceptance(key, title: str, passed: bool, detail: str = "") -> None:
    """Remember one acceptance verdict; printed in the terminal summary.

    Integer keys are the numbered criteria; other keys are supplementary checks.
    """
    label = f"criterion {key}" if isinstance(key, int) else key
    line = f"[{'PASS' if passed else 'FAIL'}] {label}: {title}"
    if detail:
        line += f" -- {detail}"
    _ACCEPTANCE[str(key)] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE, key=lambda k: (not k.isdigit(), k.zfill(3))):
            terminalreporter.write_line(_ACCEPTANCE[key])


@pytest.fixture
def cell():
    return CellConfig()


@pytest.fixture
def empty_cell():
    return CellConfig(traffic_fill="empty", include_pss=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

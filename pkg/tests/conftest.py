from __future__ import annotations

from pathlib import Path

import pytest
import yaml

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# Acceptance lines collected by tests/test_acceptance.py and echoed at the end
# of the session so they show up in the captured pytest output.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def base_cfg_path() -> Path:
    return CONFIGS / "paper-sec5.cfg"


@pytest.fixture(scope="session")
def safety_cfg_path() -> Path:
    return CONFIGS / "paper-sec5-safety.cfg"


@pytest.fixture()
def short_raw(base_cfg_path) -> dict:
    """The bundled base scenario cut to 50 ms, as a raw mapping."""
    raw = yaml.safe_load(base_cfg_path.read_text())
    raw["simulation"]["horizon"] = 0.05
    return raw


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

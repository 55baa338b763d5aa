import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stylesynth.encoders import MockEncoder  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def small_encoder():
    """Mock backend at gradient-check scale (D=16, P=32)."""
    return MockEncoder(seed=3, token_dim=16, joint_dim=32)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

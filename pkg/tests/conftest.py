import contextlib

import pytest
from hypothesis import HealthCheck, settings

from partmotion.motion import canonical_layout, canonical_skeleton

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one verdict line per acceptance criterion, echoed again in the terminal summary
VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def layout():
    return canonical_layout()


@pytest.fixture(scope="session")
def skeleton():
    return canonical_skeleton()


@pytest.fixture
def criterion():
    @contextlib.contextmanager
    def run(number: int, title: str, notes: dict):
        """Record PASS/FAIL for one criterion; ``notes`` is filled in by the body."""
        try:
            yield
        except BaseException:
            line = f"FAIL criterion {number:2d} {title}: {_fmt(notes)}"
            VERDICTS.append(line)
            print(line)
            raise
        line = f"PASS criterion {number:2d} {title}: {_fmt(notes)}"
        VERDICTS.append(line)
        print(line)

    return run


def _fmt(notes: dict) -> str:
    return ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in notes.items())


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)

from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from devneg import paillier

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def keypair():
    """512-bit test-profile Paillier key, generated once."""
    return paillier.generate_keypair(512, seed=20240601)


@pytest.fixture(scope="session")
def student():
    from devneg.harness.runner import default_student

    return default_student()


# acceptance verdicts, one line per criterion, printed after the run
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"C{n:<2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")

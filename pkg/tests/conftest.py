import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict per acceptance criterion: ``acceptance(n, passed, detail)``."""
    def record(number, passed, detail):
        prev = ACCEPTANCE.get(number)
        ok = passed and (prev is None or prev[0])
        details = detail if prev is None else f"{prev[1]}; {detail}"
        ACCEPTANCE[number] = (ok, details)
        print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} | {detail}")

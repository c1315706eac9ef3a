from __future__ import annotations

import pytest

from co2flex.system_model import bundled_network, parse_network

from helpers import tiny_doc

@pytest.fixture
def tiny():
    return parse_network(tiny_doc())


@pytest.fixture(scope="session")
def testsys5():
    return bundled_network("testsys5")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, title, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} ({detail})")

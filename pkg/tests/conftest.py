from pathlib import Path

import pytest

from netsynth.datagen import GenOptions
from netsynth.factbase import parse

ROOT = Path(__file__).resolve().parent.parent
WORKED_EXAMPLE = ROOT / "examples_facts" / "worked_example.facts"

# small instances: quick to simulate, still exercise reflection and ties
SMALL = GenOptions(routers_min=3, routers_max=6, externals_min=1, externals_max=3,
                   dests_min=1, dests_max=2, announcers_max=2, weight_min=1, weight_max=4,
                   attr_max=2)
DESK = GenOptions(routers_min=6, routers_max=10)


@pytest.fixture
def worked_example():
    return parse(WORKED_EXAMPLE.read_text())


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(number, ok, detail):
    ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    print(ACCEPTANCE[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

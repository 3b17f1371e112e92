import os

import pytest
from hypothesis import HealthCheck, settings

import retort
from retort.deck import load_deck, parse_deck

DECK_DIR = os.path.join(os.path.dirname(retort.__file__), "decks")
GOLDEN = sorted(f for f in os.listdir(DECK_DIR) if f.endswith(".deck"))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MINIMAL = """\
[MATERIALS]
soil k=1e-12 phi=0.4 psi_s=-0.1 b=4

[GRID]
element volume=1 area=1 z=0 material=soil
"""


def deck_path(name: str) -> str:
    return os.path.join(DECK_DIR, name)


def golden(name: str):
    return load_deck(deck_path(name))


def deck_text(name: str) -> str:
    with open(deck_path(name), encoding="utf-8") as fh:
        return fh.read()


def mini(extra: str = "", head: str = MINIMAL):
    return parse_deck(head + extra)


@pytest.fixture
def case2():
    return golden("case2_clogging.deck")


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
            terminalreporter.write_line(line)

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(scope="session")
def chess_full():
    """Full feedback for every chess label; a few seconds each, so computed once."""
    from abdlearn.abduction import abduce_all
    from abdlearn.logic import Outcome
    from abdlearn.scenarios.chess import OUTCOMES, chess_theory

    t = chess_theory(3)
    return {label: abduce_all(t, Outcome.of(label)) for label in OUTCOMES}


def pytest_terminal_summary(terminalreporter):
    import verdicts

    ran = any("test_acceptance" in r.nodeid for rs in terminalreporter.stats.values() for r in rs if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for line in verdicts.lines():
        terminalreporter.write_line(line)

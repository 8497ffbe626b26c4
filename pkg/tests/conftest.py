import numpy as np
import pytest

from imgbk.graph import build_graph

_ACCEPTANCE_LINES = []


def record_criterion(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def path4():
    """Path 0-1-2-3 with labels [0, 0, 1, 1]."""
    x = np.arange(8, dtype=float).reshape(4, 2)
    return build_graph([(0, 1), (1, 2), (2, 3)], x, [0, 0, 1, 1])


@pytest.fixture
def toy12():
    """12-node graph mixing homophilic and heterophilic edges, 3 classes, 4 features."""
    rng = np.random.default_rng(7)
    labels = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2])
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 5), (5, 6), (6, 7), (7, 8), (8, 9),
             (9, 10), (10, 11), (11, 0), (2, 9), (4, 7), (3, 10), (1, 6)]
    return build_graph(edges, rng.normal(size=(12, 4)), labels)

import numpy as np
import pytest

from graphppd.graphdata import Graph

# lines collected by the acceptance module, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def random_graph(rng: np.random.Generator, n_min=1, n_max=8, feat_dim=3, edge_dim=0, p=0.4, label=0) -> Graph:
    n = int(rng.integers(n_min, n_max + 1))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    ef = rng.normal(size=(len(edges), edge_dim)) if edge_dim else None
    return Graph(n, edges, rng.normal(size=(n, feat_dim)), label, ef)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

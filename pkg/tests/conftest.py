import pytest

from lqot.kg import from_named_triples, synthetic_kg


@pytest.fixture
def chain_kg():
    # a -r1-> b -r2-> c, plus a -r1-> c
    return from_named_triples([("a", "r1", "b"), ("b", "r2", "c"), ("a", "r1", "c")])


@pytest.fixture(scope="session")
def small_kg():
    return synthetic_kg(n_entities=30, n_relations=3, n_edges=90, n_clusters=5, seed=3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

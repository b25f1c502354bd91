import os

import pytest
from hypothesis import HealthCheck, settings

from molsampler.molgraph import BondType, MolGraph, SubstructureVocab, atom_vocab

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def desk():
    return SubstructureVocab.builtin("desk")


@pytest.fixture(scope="session")
def full():
    return SubstructureVocab.builtin("full")


@pytest.fixture(scope="session")
def co():
    return atom_vocab(["C", "O"])


def path_graph(vocab, labels, bonds=None):
    """Linear chain of atom labels joined by the given bonds (single by default)."""
    ids = [vocab.index(x) for x in labels]
    bonds = bonds or [BondType.SINGLE] * (len(ids) - 1)
    return MolGraph(vocab, ids, [(i, i + 1, b) for i, b in enumerate(bonds)])


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)

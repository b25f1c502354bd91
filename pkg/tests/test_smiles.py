import random

import pytest
from hypothesis import given, strategies as st

from molsampler.molgraph import BondType, SubstructureVocab, graph_isomorphic
from molsampler.smiles import (SmilesError, SmilesLexError, SmilesSyntaxError, UnknownAtomError,
                               UnsupportedSmilesError, ValenceError, parse_smiles, perceive_rings,
                               read_atom_graph, read_corpus, tokenize, write_smiles)
from molsampler.config import builtin_profile_path

CORPUS = builtin_profile_path("roundtrip").with_suffix(".smi")


def test_parse_cco(desk):
    g = parse_smiles("CCO", desk)
    assert [desk[s].label for s in g.nodes] == ["C", "C", "O"]
    assert sorted((e.u, e.v) for e in g.edges) == [(0, 1), (1, 2)]
    assert all(e.bond == BondType.SINGLE for e in g.edges)


def test_isolated_ring_collapses(desk):
    g = parse_smiles("c1ccccc1", desk)
    assert g.n == 1 and not g.edges and desk[g.nodes[0]].label == "c1ccccc1"


def test_ring_with_substituent(desk):
    g = parse_smiles("c1ccccc1C", desk)
    assert g.n == 2 and len(g.edges) == 1
    assert g.edges[0].bond == BondType.SINGLE
    assert {desk[s].label for s in g.nodes} == {"c1ccccc1", "C"}


def test_write_examples(desk):
    assert write_smiles(parse_smiles("C", desk)) == "C"
    assert write_smiles(parse_smiles("c1ccccc1", desk)) == "c1ccccc1"


def test_perceive_rings():
    rings = perceive_rings(read_atom_graph("C1CCCCC1"))
    assert len(rings) == 1 and rings[0].size == 6 and rings[0].isolated
    assert perceive_rings(read_atom_graph("CCCCC")) == []
    fused = perceive_rings(read_atom_graph("c1ccc2ccccc2c1"))
    assert sorted(r.size for r in fused) == [6, 6]
    assert not any(r.isolated for r in fused)


@pytest.mark.parametrize("text,exc", [
    ("C[C@H](O)N", UnsupportedSmilesError),
    ("CC.O", UnsupportedSmilesError),
    ("C%12CC%12", UnsupportedSmilesError),
    ("[13CH4]", UnsupportedSmilesError),
    ("C1CC", SmilesSyntaxError),
    ("C(C", SmilesSyntaxError),
    ("C)C", SmilesSyntaxError),
    ("", SmilesSyntaxError),
    ("Xx", SmilesLexError),
    ("O(C)(C)C", ValenceError),
])
def test_errors(desk, text, exc):
    with pytest.raises(exc):
        parse_smiles(text, desk)


def test_fused_rings_stay_atomic(desk):
    g = parse_smiles("c1ccc2ccccc2c1", desk)
    assert g.n == 10 and all(desk[s].label == "C" for s in g.nodes)
    assert all(e.bond == BondType.AROMATIC for e in g.edges)


def test_error_offset(desk):
    with pytest.raises(SmilesError) as info:
        parse_smiles("CCC[C@H]C", desk)
    assert info.value.offset == 5  # the "@"


def test_unknown_atom_for_vocab(desk):
    with pytest.raises(UnknownAtomError):
        parse_smiles("CP", desk)


def test_tokenize_offsets():
    toks = tokenize("C(=O)Cl")
    assert [t.offset for t in toks] == [0, 1, 2, 3, 4, 5]


def test_corpus_roundtrip(full):
    rows = read_corpus(CORPUS)
    assert len(rows) == 100
    for text, name in rows:
        g = parse_smiles(text, full)
        back = parse_smiles(write_smiles(g), full)
        assert graph_isomorphic(g, back), name


def test_corpus_has_no_fused_rings():
    for text, _ in read_corpus(CORPUS):
        assert all(r.isolated for r in perceive_rings(read_atom_graph(text)))


ALPHABET = list("CNOSPFcnos()=#-:123[]H+.@%0Bril/\\ ") + ["Cl", "Br", "[nH]", "c1ccccc1"]


@given(st.lists(st.sampled_from(ALPHABET), max_size=25).map("".join))
def test_parser_fuzz_only_raises_smiles_errors(full, text):
    try:
        g = parse_smiles(text, full)
    except SmilesError:
        return
    assert graph_isomorphic(g, parse_smiles(write_smiles(g), full))


@given(st.text(max_size=30))
def test_parser_arbitrary_text(full, text):
    try:
        parse_smiles(text, full)
    except SmilesError:
        pass


def mutate(rng: random.Random, s: str) -> str:
    chars = list(s)
    for _ in range(rng.randint(1, 4)):
        k = rng.randrange(4)
        pos = rng.randint(0, len(chars))
        if k == 0 or not chars:
            chars.insert(pos, rng.choice(ALPHABET))
        elif k == 1:
            del chars[min(pos, len(chars) - 1)]
        elif k == 2:
            chars[min(pos, len(chars) - 1)] = rng.choice(ALPHABET)
        else:
            i, j = sorted(rng.sample(range(len(chars) + 1), 2))
            chars = chars[:i] + chars[j:] + chars[i:j]
    return "".join(chars)


def fuzz(vocab: SubstructureVocab, n: int, seed: int = 0) -> tuple[int, int]:
    """Mutate corpus molecules ``n`` times; returns (parsed, rejected)."""
    rng = random.Random(seed)
    base = [t for t, _ in read_corpus(CORPUS)]
    ok = bad = 0
    for _ in range(n):
        text = mutate(rng, rng.choice(base))
        try:
            parse_smiles(text, vocab)
            ok += 1
        except SmilesError:
            bad += 1
    return ok, bad


def test_fuzz_mutations_small(full):
    ok, bad = fuzz(full, 3000, seed=1)
    assert ok + bad == 3000 and ok > 0 and bad > 0

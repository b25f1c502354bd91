import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from molsampler.chem import enumerate_ring_attachments, is_valid
from molsampler.gnn import UniformModels
from molsampler.molgraph import BondType, MolGraph, canonical_key, graph_isomorphic
from molsampler.properties import TargetDistConfig, builtin_scorer
from molsampler.proposal import (ADD, DELETE, OPS, REPLACE, ProposalConfig, add_completions,
                                 enumerate_moves, generate_pool, propose_add, propose_delete,
                                 propose_replace, replace_completions)
from molsampler.smiles import parse_smiles

from conftest import path_graph
from test_molgraph import ring_trees


class Fixed(UniformModels):
    """Uniform stand-in whose substructure draw always lands on one label."""

    def __init__(self, c1, label, p_expand=0.5):
        super().__init__(c1, p_expand)
        self._row = np.zeros(c1)
        self._row[label] = 1.0


def target_for(x):
    return TargetDistConfig(x, (1.0, 0.3), [builtin_scorer("plogp")])


def test_identity_replacement(desk):
    y = parse_smiles("CCO", desk)
    p = propose_replace(y, 1, Fixed(len(desk), 0), np.random.default_rng(0), target_for(y))
    assert graph_isomorphic(p.candidate, y)
    assert p.terms["m_old"] == p.terms["m_new"] == 1.0


def test_replace_center_by_nitrogen(desk):
    y = parse_smiles("CCC", desk)
    p = propose_replace(y, 1, Fixed(len(desk), desk.index("N")), np.random.default_rng(0),
                        target_for(y))
    assert graph_isomorphic(p.candidate, parse_smiles("CNC", desk))
    assert is_valid(p.candidate)


@pytest.mark.parametrize("smiles,v", [("CCO", 1), ("CC(C)(C)C", 0), ("Cc1ccccc1", 0), ("CC", 0)])
def test_ring_replacement_iff_attachments_exist(desk, smiles, v):
    y = parse_smiles(smiles, desk)
    ring = desk.index("c1ccccc1")
    got = replace_completions(y, v, ring, target_for(y))
    nodes = list(y.nodes)
    nodes[v] = ring
    others = [e.other(v) for e in y.incident(v)]
    bare = y.with_nodes_edges(nodes, [e for e in y.edges if v not in (e.u, e.v)])
    if len(others) == 1:
        possible = bool(enumerate_ring_attachments(bare, v, others[0]))
        assert bool(got) == possible
    if len(others) > desk[ring].attachment_capacity:
        assert got == []
    assert all(is_valid(g) for g in got)


def test_add_to_bare_carbon(desk):
    y = MolGraph(desk, [0])
    models = Fixed(len(desk), 0, p_expand=0.999999)
    p = propose_add(y, 0, models, np.random.default_rng(0), target_for(y))
    assert p.candidate.n == 2 and is_valid(p.candidate)
    assert p.candidate.degree(1) == 1


def test_add_to_saturated_carbon(desk):
    y = parse_smiles("CC(C)(C)C", desk)
    models = Fixed(len(desk), 0, p_expand=0.999999)
    assert propose_add(y, 1, models, np.random.default_rng(0), target_for(y)) is None


@given(ring_trees(), st.integers(0, 2**32 - 1))
def test_added_node_is_leaf(g, seed):
    rng = np.random.default_rng(seed)
    models = UniformModels(len(g.vocab), 0.9)
    tgt = target_for(g)
    for u in range(g.n):
        p = propose_add(g, u, models, rng, tgt)
        if p is not None:
            assert p.candidate.n == g.n + 1
            assert p.candidate.degree(g.n) == 1
            assert is_valid(p.candidate)


def test_delete_examples(desk):
    y = parse_smiles("CO", desk)
    p = propose_delete(y, 1, UniformModels(len(desk)), target_for(y))
    assert p.candidate.n == 1 and desk[p.candidate.nodes[0]].label == "C"
    tri = MolGraph(desk, [0, 0, 0], [(0, 1, 0), (1, 2, 0), (0, 2, 0)])
    assert propose_delete(tri, 0, UniformModels(len(desk)), target_for(tri)) is None
    assert propose_delete(MolGraph(desk, [0]), 0, UniformModels(len(desk)),
                          target_for(MolGraph(desk, [0]))) is None


def test_delete_then_add_back(desk):
    y = parse_smiles("CC(O)C", desk)
    models = Fixed(len(desk), desk.index("O"), 0.999999)
    leaf = next(v for v in range(y.n) if desk[y.nodes[v]].label == "O")
    d = propose_delete(y, leaf, models, target_for(y))
    u = d.site[1]
    u_new = u if u < leaf else u - 1
    a = propose_add(d.candidate, u_new, models, np.random.default_rng(0), target_for(y))
    assert graph_isomorphic(a.candidate, y)


def test_pool_single_node(desk):
    y = MolGraph(desk, [0])
    pool = generate_pool(y, UniformModels(len(desk), 0.999999), np.random.default_rng(0), target_for(y))
    assert not any(p.op == DELETE for p in pool)
    assert any(p.op == ADD for p in pool)


def test_pool_path_deletes(desk):
    y = parse_smiles("CCC", desk)
    pool = generate_pool(y, UniformModels(len(desk)), np.random.default_rng(0), target_for(y))
    assert sum(p.op == DELETE for p in pool) == 2


@settings(max_examples=40)
@given(ring_trees(), st.integers(0, 2**32 - 1))
def test_pool_members_valid(g, seed):
    pool = generate_pool(g, UniformModels(len(g.vocab), 0.7), np.random.default_rng(seed), target_for(g))
    for p in pool:
        assert is_valid(p.candidate)
        assert p.op in OPS
        for v in p.terms.values():
            assert 0.0 < v <= 1.0


def test_pool_audit_many_molecules(desk):
    from molsampler.config import builtin_profile_path
    from molsampler.smiles import read_corpus

    rng = np.random.default_rng(11)
    seeds = [parse_smiles(s, desk) for s, _ in read_corpus(builtin_profile_path("seeds_desk").with_suffix(".smi"))]
    models = UniformModels(len(desk), 0.6)
    checked = 0
    for i in range(1000):
        y = seeds[i % len(seeds)]
        tgt = target_for(seeds[0])
        for p in generate_pool(y, models, rng, tgt):
            assert is_valid(p.candidate)
            checked += 1
    assert checked > 1000


@settings(max_examples=30)
@given(ring_trees(), st.sampled_from(OPS))
def test_enumerated_path_mass_is_one(g, op):
    ms = enumerate_moves(g, op, UniformModels(len(g.vocab), 0.4), target_for(g))
    assert ms.total() == pytest.approx(1.0, abs=1e-12)
    for p in ms.paths:
        assert is_valid(p.candidate) and p.prob > 0


def test_sampled_frequencies_match_enumeration(desk):
    """Empirical candidate frequencies of the sampled replace/add moves agree with
    the enumerated path probabilities (a dual route for the proposal law)."""
    y = parse_smiles("CC(=O)c1ccccc1", desk)
    tgt = target_for(y)
    models = UniformModels(len(desk), 0.5)
    rng = np.random.default_rng(5)
    n = 20000
    for op, sampler in ((REPLACE, lambda: propose_replace(y, int(rng.integers(y.n)), models, rng, tgt)),
                        (ADD, lambda: propose_add(y, int(rng.integers(y.n)), models, rng, tgt))):
        ms = enumerate_moves(y, op, models, tgt)
        exact = {}
        for p in ms.paths:
            exact[p.key] = exact.get(p.key, 0.0) + p.prob
        counts = {}
        for _ in range(n):
            p = sampler()
            k = "<fail>" if p is None else canonical_key(p.candidate, cap=None)
            counts[k] = counts.get(k, 0) + 1
        exact["<fail>"] = ms.fail_mass
        keys = set(exact) | set(counts)
        tv = 0.5 * sum(abs(counts.get(k, 0) / n - exact.get(k, 0.0)) for k in keys)
        assert tv < 0.03, op


def test_bond_type_restriction(desk):
    y = parse_smiles("CC", desk)
    cfg = ProposalConfig(bond_types=(BondType.SINGLE,))
    for g in add_completions(y, 0, desk.index("O"), target_for(y), cfg):
        assert all(e.bond == BondType.SINGLE for e in g.edges)
    with pytest.raises(ValueError):
        ProposalConfig(bond_types=())
    with pytest.raises(ValueError):
        ProposalConfig(add_mode="sometimes")

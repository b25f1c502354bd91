import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from molsampler.chem import is_valid
from molsampler.fingerprint import fingerprint, tanimoto
from molsampler.gnn import GnnModels, GnnParams, UniformModels
from molsampler.molgraph import BondType, MolGraph, atom_vocab, canonical_key
from molsampler.properties import NEG_INF, TargetDistConfig, builtin_scorer, log_target_density
from molsampler.proposal import ADD, DELETE, REPLACE, Proposal, ProposalConfig, propose_add, propose_delete
from molsampler.sampler import (KernelConfig, MoveCache, RunConfig, acceptance, best_output, log_weight,
                                mh_step, run_mh_chain, run_population, weight_add, weight_delete, weight_replace)
from molsampler.smiles import parse_smiles

from conftest import path_graph

SINGLE = ProposalConfig(bond_types=(BondType.SINGLE,))


def plogp_target(x, **kw):
    return TargetDistConfig(x, (1.0, 0.3), [builtin_scorer("plogp")], **kw)


def prop(y, cand, op, terms, target):
    return Proposal(cand, op, (0, None), terms, 1.0, log_target_density(target, cand))


def test_kernel_config_checks():
    with pytest.raises(ValueError):
        KernelConfig((0.5, 0.4, 0.1))
    KernelConfig((0.5, 0.4, 0.1), allow_unbalanced=True)
    with pytest.raises(ValueError):
        KernelConfig((0.5, 0.3, 0.3))
    with pytest.raises(ValueError):
        KernelConfig(weight_convention="other")
    with pytest.raises(ValueError):
        RunConfig(T_max=3, T_burnin=4)
    with pytest.raises(ValueError):
        RunConfig(N=0)


def test_replace_weight_unity(co):
    y = path_graph(co, "CC")
    t = plogp_target(y)
    assert weight_replace(t, y, prop(y, y, REPLACE, {"m_old": 0.3, "m_new": 0.3}, t)) == 1.0


def test_replace_weight_invalid_candidate(co):
    y = path_graph(co, "CC")
    t = plogp_target(y)
    bad = MolGraph(co, [1, 0, 0, 0], [(0, 1, 0), (0, 2, 0), (0, 3, 0)])
    assert weight_replace(t, y, prop(y, bad, REPLACE, {"m_old": 0.5, "m_new": 0.5}, t)) == 0.0
    assert acceptance(NEG_INF) == 0.0


def test_weight_needs_valid_current_state(co):
    y = path_graph(co, "CCC")
    t = plogp_target(path_graph(co, "CC"), max_nodes=2)
    with pytest.raises(ValueError):
        weight_replace(t, y, prop(y, path_graph(co, "CC"), REPLACE, {"m_old": 0.5, "m_new": 0.5}, t))


def test_add_delete_weight_examples(co):
    y = MolGraph(co, [0])
    t = TargetDistConfig(y, (0.0, 0.0), [builtin_scorer("logp")])    # flat density
    cand = path_graph(co, "CC")
    assert weight_add(t, y, prop(y, cand, ADD, {"b": 0.5, "m_new": 1.0}, t)) == pytest.approx(1.0)
    assert weight_add(t, y, prop(y, cand, ADD, {"b": 1.0, "m_new": 1.0}, t)) == math.inf
    assert weight_add(t, y, prop(y, cand, ADD, {"b": 1 - 1e-12, "m_new": 1.0}, t)) > 1e10
    assert weight_delete(t, cand, prop(cand, y, DELETE, {"b": 0.5, "m_old": 1.0}, t)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        weight_add(t, y, prop(y, cand, DELETE, {"b": 0.5, "m_old": 1.0}, t))


def test_add_delete_weights_are_reciprocal(desk):
    rng = np.random.default_rng(0)
    models = GnnModels(GnnParams.init("mgnn", len(desk), d=16, K=2, rng=rng),
                       GnnParams.init("bgnn", len(desk), d=16, K=2, rng=rng))
    for text in ["CCO", "CC(C)N", "c1ccccc1CC", "OCC1CCCCC1"]:
        y = parse_smiles(text, desk)
        t = plogp_target(y)
        for u in range(y.n):
            a = propose_add(y, u, models, np.random.default_rng(u), t, SINGLE)
            if a is None or a.candidate.degree(y.n) != 1:
                continue
            d = propose_delete(a.candidate, y.n, models, t)
            wa = weight_add(t, y, a)
            wd = weight_delete(t, a.candidate, d)
            assert wa * wd == pytest.approx(1.0, rel=1e-12)


def _two_state():
    vocab = atom_vocab(["C"])
    x = MolGraph(vocab, [0])
    t = TargetDistConfig(x, (1.0,), [], max_nodes=2)
    s = tanimoto(fingerprint(x), fingerprint(path_graph(vocab, "CC")))
    return vocab, x, t, s


def test_two_state_weights_by_hand():
    vocab, x, t, s = _two_state()
    models = UniformModels(1)
    cc = path_graph(vocab, "CC")
    cache = MoveCache(models, t, SINGLE)
    k = KernelConfig()
    a = propose_add(x, 0, UniformModels(1, 1 - 1e-15), np.random.default_rng(0), t, SINGLE)
    a.terms["b"] = 0.5
    # textbook: q(C->CC) = 1/2 (grow draw), q(CC->C) = 1 (either leaf)
    assert log_weight(k, t, x, a, cache) == pytest.approx((s - 1.0) + math.log(1.0 / 0.5), abs=1e-12)
    d = propose_delete(cc, 1, models, t)
    assert log_weight(k, t, cc, d, cache) == pytest.approx((1.0 - s) + math.log(0.5 / 1.0), abs=1e-12)
    # printed ratios: b * m / (1 - b) with b = 1/2, m = 1
    assert weight_add(t, x, a) == pytest.approx(math.exp(s - 1.0), abs=1e-12)
    assert weight_delete(t, cc, d) == pytest.approx(math.exp(1.0 - s), abs=1e-12)


def test_replace_only_kernel(co):
    x = path_graph(co, "CCO")
    t = plogp_target(x)
    k = KernelConfig((1.0, 0.0, 0.0))
    cache = MoveCache(UniformModels(2), t)
    rng = np.random.default_rng(0)
    y = x
    for _ in range(200):
        y, info = mh_step(t, k, y, UniformModels(2), rng, cache)
        assert info.op == REPLACE
        assert y.n == 3


def test_chain_stays_when_everything_is_rejected(co):
    x = MolGraph(co, [0])
    t = plogp_target(x, max_nodes=1)
    k = KernelConfig((0.0, 0.5, 0.5))
    cache = MoveCache(UniformModels(2), t)
    rng = np.random.default_rng(1)
    y = x
    for _ in range(100):
        y, info = mh_step(t, k, y, UniformModels(2), rng, cache)
        assert not info.accepted and y is cache.reps[canonical_key(x)]


def test_one_step_frequencies_match_matrix_rows():
    from molsampler.oracle import build_transition_matrix, enumerate_states

    vocab = atom_vocab(["C", "O"])
    space = enumerate_states(vocab, 3, bond_types=(BondType.SINGLE,))
    t = plogp_target(path_graph(vocab, "CCO"), max_nodes=3)
    k = KernelConfig()
    models = UniformModels(2)
    cache = MoveCache(models, t, SINGLE)
    T, _ = build_transition_matrix(space, k, t, models, SINGLE, cache=cache)
    rng = np.random.default_rng(2)
    n = 20000
    for i in range(len(space)):
        counts = np.zeros(len(space))
        for _ in range(n):
            y, _ = mh_step(t, k, space.states[i], models, rng, cache, SINGLE)
            counts[space.index[canonical_key(y, cap=None)]] += 1
        tv = 0.5 * np.abs(counts / n - T[i]).sum()
        assert tv < 0.02, space.keys[i]


def test_mh_chain_run_bookkeeping(co):
    t = plogp_target(parse_smiles("CCO", co), max_nodes=3)
    a = run_mh_chain(t, KernelConfig(), UniformModels(2), 2000, np.random.default_rng(4), cfg=SINGLE)
    b = run_mh_chain(t, KernelConfig(), UniformModels(2), 2000, np.random.default_rng(4), cfg=SINGLE)
    assert a.keys == b.keys and len(a.keys) == 2000
    assert set(a.keys) == set(a.states) - ({canonical_key(t.x, cap=None)} - set(a.keys))
    assert 0 < a.accepted <= a.proposals <= 2000 and a.invalid_proposals == 0
    assert all(g.n <= 3 and is_valid(g) for g in a.states.values())


def test_population_zero_iterations(desk):
    x = parse_smiles("CCO", desk)
    phi, trace = run_population(RunConfig(5, 0, 0), KernelConfig(weight_convention="model_ratio", mode="population"),
                            plogp_target(x), UniformModels(len(desk)))
    assert phi == {} and trace.iterations == []
    g, lp = best_output(phi, plogp_target(x))
    assert g is x and lp == 1.0


def test_population_single_node_space_is_replace_chain(desk):
    x = MolGraph(desk, [0])
    t = plogp_target(x, max_nodes=1)
    phi, trace = run_population(RunConfig(1, 8, 3), KernelConfig((1.0, 0.0, 0.0), "model_ratio", "population"),
                            t, UniformModels(len(desk)))
    assert all(g.n == 1 for g, _ in phi.values())
    assert all(r["op"] in ("keep", "replace") for r in trace.records if r["accepted"])


def _run(x_text, seed, vocab, N=6, T=6, B=3):
    x = parse_smiles(x_text, vocab)
    t = plogp_target(x)
    return x, t, run_population(RunConfig(N, T, B, seed), KernelConfig(weight_convention="model_ratio", mode="population"),
                            t, UniformModels(len(vocab)), cfg=ProposalConfig(bond_types=(BondType.SINGLE, BondType.DOUBLE)))


@settings(max_examples=8)
@given(st.sampled_from(["CCO", "CC(=O)N", "c1ccccc1O", "CC1CCCCC1"]), st.integers(0, 1000))
def test_population_invariants(desk, text, seed):
    x, t, (phi, trace) = _run(text, seed, desk)
    assert trace.invalid_seen == 0
    for g, lp in phi.values():
        assert is_valid(g) and lp == log_target_density(t, g)
    burn = [it for it in trace.iterations if it["phase"] == "burnin"]
    for a, b in zip(burn, burn[1:]):
        assert b["max_log_density"] >= a["max_log_density"]
        if a["selected"] == 6:   # once Θ is full, its worst member never gets worse
            assert b["min_log_density"] >= a["min_log_density"]
    # Φ only ever grows: each iteration's picks are in it
    picked = {canonical_key(parse_smiles(r["smiles"], desk), cap=None)
              for r in trace.records if r["accepted"]}
    assert picked == set(phi)


def test_population_reproducible(desk):
    _, _, (phi1, tr1) = _run("CCOc1ccccc1", 4, desk)
    _, _, (phi2, tr2) = _run("CCOc1ccccc1", 4, desk)
    assert list(phi1) == list(phi2) and tr1.records == tr2.records
    _, _, (phi3, _) = _run("CCOc1ccccc1", 5, desk)
    assert list(phi3) != list(phi1)


def test_best_output_excludes_input(desk):
    x, t, (phi, _) = _run("CCO", 0, desk)
    g, lp = best_output(phi, t)
    assert canonical_key(g) != canonical_key(x)
    assert lp == max(v for k, (_, v) in phi.items() if k != canonical_key(x))


def test_profile_run_defaults():
    from molsampler.config import load_profile

    r = load_profile().run
    assert (r.N, r.T_max, r.T_burnin) == (20, 10, 5)

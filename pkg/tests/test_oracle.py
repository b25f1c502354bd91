import math

import numpy as np
import pytest

from molsampler import _kernels
from molsampler.fingerprint import fingerprint, tanimoto
from molsampler.gnn import GnnModels, GnnParams, UniformModels, pretrain, TrainConfig
from molsampler.molgraph import BondType, MolGraph, atom_vocab
from molsampler.oracle import (OracleError, build_transition_matrix, detailed_balance_check,
                               empirical_vs_exact, enumerate_states, exact_distribution,
                               reachable_within, stationary_distribution, total_variation, verify)
from molsampler.properties import TargetDistConfig, builtin_scorer
from molsampler.proposal import ProposalConfig
from molsampler.sampler import KernelConfig, MoveCache, run_tabulated, tabulate

from conftest import path_graph

SINGLE = (BondType.SINGLE,)
CFG = ProposalConfig(bond_types=SINGLE)


def test_enumeration_counts():
    assert len(enumerate_states(atom_vocab(["C"]), 1, SINGLE)) == 1
    assert len(enumerate_states(atom_vocab(["C"]), 2, SINGLE)) == 2
    space = enumerate_states(atom_vocab(["C", "O"]), 2, SINGLE)
    assert len(space) == 5
    # trees on <= 3 nodes over {C, O}: 2 + 3 + 6
    assert len(enumerate_states(atom_vocab(["C", "O"]), 3, SINGLE)) == 11


def test_enumeration_guard():
    with pytest.raises(OracleError):
        enumerate_states(atom_vocab(["C", "N", "O"]), 4, limit=20)
    with pytest.raises(ValueError):
        enumerate_states(atom_vocab(["C"]), 0)


def test_enumeration_with_cycles():
    space = enumerate_states(atom_vocab(["C"]), 3, SINGLE, include_cycles=True)
    assert len(space) == 4   # C, CC, CCC, cyclopropane


def _space_target(vocab_labels, max_nodes, x_text):
    vocab = atom_vocab(vocab_labels)
    space = enumerate_states(vocab, max_nodes, SINGLE)
    x = path_graph(vocab, x_text)
    return vocab, space, TargetDistConfig(x, (1.0, 0.3), [builtin_scorer("plogp")], max_nodes=max_nodes)


def test_single_state_matrix():
    vocab = atom_vocab(["C"])
    space = enumerate_states(vocab, 1, SINGLE)
    t = TargetDistConfig(space.states[0], (1.0,), [], max_nodes=1)
    T, _ = build_transition_matrix(space, KernelConfig(), t, UniformModels(1), CFG)
    assert T.tolist() == [[1.0]]
    rep = verify(space, KernelConfig(), t, UniformModels(1), CFG, tv_steps=1000)
    assert rep.ok


def test_two_state_matrix_by_hand():
    vocab = atom_vocab(["C"])
    space = enumerate_states(vocab, 2, SINGLE)
    x = space.states[0]
    t = TargetDistConfig(x, (1.0,), [], max_nodes=2)
    s = tanimoto(fingerprint(x), fingerprint(space.states[1]))
    g = (0.5, 0.25, 0.25)
    T, _ = build_transition_matrix(space, KernelConfig(g), t, UniformModels(1), CFG)
    # C -> CC: pick add, grow with prob 1/2, accept min(1, e^(s-1) * 1 / (1/2))
    up = g[1] * 0.5 * min(1.0, math.exp(s - 1.0) * 2.0)
    # CC -> C: pick delete, either leaf, accept min(1, e^(1-s) * (1/2) / 1)
    down = g[2] * 1.0 * min(1.0, math.exp(1.0 - s) * 0.5)
    assert T[0, 1] == pytest.approx(up, abs=1e-12)
    assert T[1, 0] == pytest.approx(down, abs=1e-12)
    assert T[0, 0] == pytest.approx(1 - up, abs=1e-12)


def test_replace_only_kernel_has_no_size_changes():
    vocab, space, t = _space_target(["C", "O"], 3, "CCO")
    T, _ = build_transition_matrix(space, KernelConfig((1.0, 0.0, 0.0)), t, UniformModels(2), CFG)
    for i, a in enumerate(space.states):
        for j, b in enumerate(space.states):
            if a.n != b.n:
                assert T[i, j] == 0.0


def test_power_iteration_examples():
    p0 = np.array([0.2, 0.8])
    assert np.allclose(stationary_distribution(np.eye(2), p0), p0)
    T = np.array([[0.7, 0.3], [0.3, 0.7]])
    assert np.allclose(stationary_distribution(T), [0.5, 0.5], atol=1e-12)
    periodic = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(OracleError):
        stationary_distribution(periodic, np.array([1.0, 0.0]), max_iter=100)


@pytest.mark.parametrize("impl", ["np", "nb"])
def test_power_iteration_backends(impl):
    rng = np.random.default_rng(0)
    T = rng.random((6, 6))
    T /= T.sum(axis=1, keepdims=True)
    p, _, ok = getattr(_kernels, f"{impl}_power_iteration")(T, np.full(6, 1 / 6), 1e-14, 100000)
    assert ok
    w, v = np.linalg.eig(T.T)
    ref = np.real(v[:, np.argmin(np.abs(w - 1))])
    assert np.allclose(p, ref / ref.sum(), atol=1e-12)


def test_balance_check_examples():
    T = np.array([[0.9, 0.1], [0.2, 0.8]])
    p = np.array([2 / 3, 1 / 3])
    assert detailed_balance_check(T, p) <= 1e-15
    assert total_variation([0.5, 0.5], [1.0, 0.0]) == 0.5
    tv, steps = empirical_vs_exact(np.array([0, 1, 0, 1]), 2, np.array([1.0, 0.0]))
    assert tv == 0.5 and steps == 4


def test_exact_sampling_tv_shrinks():
    rng = np.random.default_rng(3)
    p = np.array([0.1, 0.2, 0.3, 0.4])
    tvs = [total_variation(np.bincount(rng.choice(4, n, p=p), minlength=4) / n, p)
           for n in (100, 10_000, 1_000_000)]
    assert tvs[2] < tvs[0] and tvs[2] < 0.005


def test_five_state_space_balanced():
    vocab, space, t = _space_target(["C", "O"], 2, "CO")
    T, _ = build_transition_matrix(space, KernelConfig(), t, UniformModels(2), CFG)
    p = exact_distribution(space, t)
    assert detailed_balance_check(T, p) <= 1e-9
    assert np.abs(stationary_distribution(T) - p).max() <= 1e-9
    assert reachable_within(T, 4)


def test_five_state_chain_tv():
    vocab, space, t = _space_target(["C", "O"], 2, "CO")
    rep = verify(space, KernelConfig(), t, UniformModels(2), CFG, tv_steps=1_000_000, seed=1,
                 tv_route="tabulated")
    assert rep.tv <= 0.05 and rep.ok


def test_sampled_and_tabulated_routes_agree():
    vocab, space, t = _space_target(["C", "O"], 3, "CCO")
    a = verify(space, KernelConfig(), t, UniformModels(2), CFG, tv_steps=100_000, seed=3,
               tv_route="sampled")
    b = verify(space, KernelConfig(), t, UniformModels(2), CFG, tv_steps=100_000, seed=3,
               tv_route="tabulated")
    assert a.ok and b.ok and a.invalid_proposals == 0
    # both are independent estimates of the same law
    assert a.tv <= 0.03 and b.tv <= 0.03


def test_bad_tv_route():
    vocab, space, t = _space_target(["C", "O"], 2, "CO")
    with pytest.raises(ValueError):
        verify(space, KernelConfig(), t, UniformModels(2), CFG, tv_steps=10, tv_route="fast")


def test_unbalanced_gamma_is_detected():
    vocab, space, t = _space_target(["C", "O"], 3, "CCO")
    k = KernelConfig((0.5, 0.4, 0.1), allow_unbalanced=True)
    T, _ = build_transition_matrix(space, k, t, UniformModels(2), CFG)
    assert detailed_balance_check(T, exact_distribution(space, t)) > 1e-6


def test_printed_ratios_are_not_invariant():
    vocab, space, t = _space_target(["C", "O"], 3, "CCO")
    k = KernelConfig(weight_convention="model_ratio")
    T, _ = build_transition_matrix(space, k, t, UniformModels(2), CFG)
    p = exact_distribution(space, t)
    assert detailed_balance_check(T, p) > 1e-6


def test_trained_models_balance_and_tv():
    """With learned (non-uniform) predictors the exact-marginal weights stay balanced."""
    vocab, space, t = _space_target(["C", "O"], 3, "CCO")
    corpus = [s for s in space.states if s.n >= 2] * 20
    m, b, _ = pretrain(corpus, TrainConfig(batch_size=16, epochs=3, d=16, K=2, seed=0))
    models = GnnModels(m, b)
    rep = verify(space, KernelConfig(), t, models, CFG, tv_steps=300_000, seed=2,
                 tv_route="tabulated")
    assert rep.balance_violation <= 1e-9 and rep.stationarity_linf <= 1e-9
    assert rep.tv <= 0.05
    sampled = verify(space, KernelConfig(), t, models, CFG, tv_steps=50_000, seed=2)
    assert sampled.tv <= 0.05 and sampled.invalid_proposals == 0


def test_tabulated_walk_backends_agree():
    vocab, space, t = _space_target(["C", "O"], 3, "CCO")
    cache = MoveCache(UniformModels(2), t, CFG)
    tables = tabulate(space.states[0], KernelConfig(), cache, states=space.states)
    u = np.random.default_rng(0).random((5000, 3))
    args = (np.int64(0), tables.op_cum, tables.offsets, tables.targets, tables.probs, tables.accept, u)
    a, na = _kernels.np_chain_walk(*args)
    b, nb = _kernels.nb_chain_walk(*args)
    assert np.array_equal(a, b) and na == nb


def test_bfs_tabulation_finds_the_space():
    vocab, space, t = _space_target(["C", "O"], 3, "CCO")
    cache = MoveCache(UniformModels(2), t, CFG)
    tables = tabulate(t.x, KernelConfig(), cache)
    assert sorted(tables.keys) == sorted(space.keys)
    visits, _ = run_tabulated(tables, 1000, np.random.default_rng(0))
    assert visits.min() >= 0 and visits.max() < len(space)

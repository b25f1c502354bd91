import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from molsampler.gnn import (GnnModels, GnnParams, TrainConfig, UniformModels, bgnn_loss,
                            bgnn_predict, expansion_auc, gnn_forward, load_checkpoint,
                            make_bgnn_labels, masked_accuracy, mgnn_loss, mgnn_predict, pretrain,
                            roc_auc, rule_label, save_checkpoint, synthetic_rule_corpus)
from molsampler.molgraph import BondType, MolGraph, canonical_key

from conftest import path_graph
from gradcheck import max_relative_error, random_graphs
from test_molgraph import _relabel, ring_trees


def small(kind, c1, seed=0, d=8, K=3):
    return GnnParams.init(kind, c1, d=d, K=K, rng=np.random.default_rng(seed))


def test_zero_weights_single_node(co):
    p = small("mgnn", len(co))
    for k in p.arrays:
        p.arrays[k][...] = 0.0
    h = gnn_forward(p, MolGraph(co, [0]))
    assert h.shape == (1, p.d) and not h.any()
    p.arrays[f"b2_{p.K - 1}"][...] = 0.7
    assert np.allclose(gnn_forward(p, MolGraph(co, [0])), 0.7)


@given(ring_trees(), st.randoms(use_true_random=False))
def test_forward_is_permutation_equivariant(g, rnd):
    p = small("mgnn", len(g.vocab))
    perm = list(range(g.n))
    rnd.shuffle(perm)
    h = gnn_forward(p, g)
    hp = gnn_forward(p, _relabel(g, perm))
    assert np.allclose(hp[perm], h, atol=1e-9, rtol=0)


def test_isomorphic_graphs_same_embedding_multiset(co):
    p = small("mgnn", len(co))
    a = gnn_forward(p, path_graph(co, "CCOC"))
    b = gnn_forward(p, path_graph(co, "COCC"))
    key = lambda h: h[np.lexsort(h.T[::-1])]
    assert np.allclose(key(a), key(b), atol=1e-9, rtol=0)


@given(ring_trees(), st.integers(0, 2**32 - 1))
def test_mgnn_output_is_distribution(g, seed):
    p = small("mgnn", len(g.vocab), seed)
    v = seed % g.n
    out = mgnn_predict(p, g, v)
    assert out.shape == (len(g.vocab),)
    assert (out > 0).all() and abs(out.sum() - 1.0) < 1e-9
    # the mask token hides the true label (atom nodes: any atom label keeps the graph well formed)
    if g.entry(v).is_ring:
        return
    atoms = [e.id for e in g.vocab if not e.is_ring and e.id != g.nodes[v]]
    other = g.with_label(v, atoms[seed % len(atoms)])
    assert np.array_equal(mgnn_predict(p, other, v), out)


def test_zero_heads(co):
    m = small("mgnn", len(co))
    b = small("bgnn", len(co))
    for p in (m, b):
        for k in ("H1", "c1", "H2", "c2"):
            p.arrays[k][...] = 0.0
    g = path_graph(co, "CCO")
    assert np.allclose(mgnn_predict(m, g, 1), 1.0 / len(co))
    assert bgnn_predict(b, g, 1) == 0.5


@given(ring_trees(), st.integers(0, 2**32 - 1))
def test_bgnn_in_open_interval(g, seed):
    p = small("bgnn", len(g.vocab), seed)
    for k in ("H2", "c2"):
        p.arrays[k] *= 50.0
    z = bgnn_predict(p, g, seed % g.n)
    assert 0.0 < z < 1.0


def test_loss_examples():
    y = np.eye(10)[3]
    assert mgnn_loss(y, y) == pytest.approx(0.0, abs=1e-12)
    assert mgnn_loss(np.full(10, 0.1), y) == pytest.approx(math.log(10))
    assert bgnn_loss(0.5, 1) == pytest.approx(math.log(2))
    assert mgnn_loss(np.zeros(10), y) == pytest.approx(-math.log(1e-12))
    assert bgnn_loss(1.0, 0) == pytest.approx(-math.log(1e-12))


def test_bgnn_labels(co):
    assert sorted(make_bgnn_labels(path_graph(co, "CCC"))) == [(0, 0), (1, 1), (2, 0)]
    tri = MolGraph(co, [0, 0, 0], [(0, 1, 0), (1, 2, 0), (0, 2, 0)])
    assert make_bgnn_labels(tri) == []
    st_ = MolGraph(co, [0, 0, 0, 0], [(0, 1, 0), (0, 2, 0), (0, 3, 0)])
    assert sorted(make_bgnn_labels(st_)) == [(0, 1), (1, 0), (2, 0), (3, 0)]
    # a node with no leaf neighbour is not labelled
    long = path_graph(co, "CCCCC")
    assert 2 not in dict(make_bgnn_labels(long))


@pytest.mark.parametrize("kind", ["mgnn", "bgnn"])
def test_gradients_match_finite_differences(kind, desk):
    rng = np.random.default_rng(3)
    graphs = random_graphs(desk, 5, rng)
    p = small(kind, len(desk), d=6, K=2)
    res = max_relative_error(p, graphs, rng)
    assert res.err <= 1e-4, res


@pytest.mark.parametrize("kind", ["mgnn", "bgnn"])
def test_gradient_check_catches_a_wrong_entry(kind, desk, monkeypatch):
    import gradcheck

    real = gradcheck.loss_and_grad

    def off_by_one_percent(params, batch, y):
        loss, g = real(params, batch, y)
        name = max(g, key=lambda k: np.abs(g[k]).max())
        flat = g[name].reshape(-1)
        flat[np.abs(flat).argmax()] *= 1.01
        return loss, g

    monkeypatch.setattr(gradcheck, "loss_and_grad", off_by_one_percent)
    rng = np.random.default_rng(3)
    res = max_relative_error(small(kind, len(desk), d=6, K=2), random_graphs(desk, 5, rng), rng)
    assert res.err > 1e-3


def test_pretrain_smoke_and_determinism(co):
    corpus = [path_graph(co, "CCO")]
    cfg = TrainConfig(batch_size=4, epochs=1, d=8, K=2, seed=5)
    m1, b1, h1 = pretrain(corpus, cfg)
    m2, b2, h2 = pretrain(corpus, cfg)
    assert all(math.isfinite(x) for x in h1.mgnn_loss + h1.bgnn_loss)
    assert h1.mgnn_loss == h2.mgnn_loss and h1.bgnn_loss == h2.bgnn_loss
    for k in m1.arrays:
        assert np.array_equal(m1.arrays[k], m2.arrays[k])
    with pytest.raises(ValueError):
        pretrain([], cfg)


def test_training_reduces_loss(desk):
    corpus = synthetic_rule_corpus(desk, 300, seed=2)
    _, _, hist = pretrain(corpus, TrainConfig(batch_size=32, epochs=4, d=32, K=2, seed=0))
    assert hist.mgnn_loss[-1] < hist.mgnn_loss[0]
    assert hist.bgnn_loss[-1] < hist.bgnn_loss[0]


def test_synthetic_corpus_labels_follow_rule(desk):
    for g in synthetic_rule_corpus(desk, 50, seed=4):
        for v in range(g.n):
            inc = g.incident(v)
            label = rule_label(desk, [e.bond.order for e in inc], [g.degree(e.other(v)) for e in inc])
            assert label == g.nodes[v]


def test_roc_auc():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5, 0.5], [0, 1]) == 0.5
    with pytest.raises(ValueError):
        roc_auc([0.1], [1])


def test_checkpoint_roundtrip(tmp_path, desk):
    p = small("mgnn", len(desk))
    a = save_checkpoint(p, tmp_path / "a.npz", desk)
    b = save_checkpoint(p, tmp_path / "b.npz", desk)
    assert a.read_bytes() == b.read_bytes()
    q = load_checkpoint(a, desk)
    assert q.kind == "mgnn" and q.d == p.d
    for k in p.arrays:
        assert np.array_equal(p.arrays[k], q.arrays[k])
    from molsampler.molgraph import atom_vocab

    with pytest.raises(ValueError):
        load_checkpoint(a, atom_vocab(["C", "O"]))


def test_model_pair_matches_direct_prediction(desk):
    m, b = small("mgnn", len(desk)), small("bgnn", len(desk), 1)
    models = GnnModels(m, b)
    g = path_graph(desk, "CCO")
    assert np.allclose(models.mgnn(g, 1), mgnn_predict(m, g, 1))
    assert models.bgnn(g, 2) == pytest.approx(bgnn_predict(b, g, 2))
    grown = g.add_leaf(1, 0, BondType.SINGLE)
    assert np.allclose(models.mgnn_leaf(g, 1), mgnn_predict(m, grown, 3))


def test_uniform_models(co):
    u = UniformModels(len(co))
    g = path_graph(co, "CO")
    assert np.allclose(u.mgnn(g, 0), 0.5) and u.bgnn(g, 0) == 0.5
    with pytest.raises(ValueError):
        UniformModels(2, 1.0)

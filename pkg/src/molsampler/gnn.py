"""Message-passing networks for masked-substructure and expansion prediction.

Each layer sums self-and-neighbour embeddings, concatenates the summed
embeddings of incident edges, and applies a one-hidden-layer ReLU MLP
followed by a ReLU.  The masked-substructure head (``mgnn``) is a
two-layer classifier over the vocabulary; the expansion head (``bgnn``)
is a two-layer binary classifier.  Everything is plain numpy with a
hand-written backward pass.
"""

from __future__ import annotations

import io
import json
import math
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .chem import is_valid
from .molgraph import C2, BondType, MolGraph, SubstructureVocab, leaf_nodes

EPS = 1e-12
CHECKPOINT_VERSION = 1
HEAD_HIDDEN = 50


# ---------------------------------------------------------------------------
# graph tensors


@dataclass(frozen=True)
class GraphArrays:
    """Index-level view of a graph: labels plus edge endpoint/bond arrays."""

    labels: np.ndarray
    eu: np.ndarray
    ev: np.ndarray
    eb: np.ndarray

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @classmethod
    def from_graph(cls, g: MolGraph) -> "GraphArrays":
        if g.edges:
            e = np.array([(x.u, x.v, int(x.bond)) for x in g.edges], dtype=np.int64)
            eu, ev, eb = e[:, 0], e[:, 1], e[:, 2]
        else:
            eu = ev = eb = np.zeros(0, dtype=np.int64)
        return cls(np.array(g.nodes, dtype=np.int64), eu, ev, eb)

    def with_leaf(self, anchor: int, bond: BondType = BondType.SINGLE, label: int = 0) -> "GraphArrays":
        v = self.n
        return GraphArrays(
            np.append(self.labels, label),
            np.append(self.eu, anchor), np.append(self.ev, v), np.append(self.eb, int(bond)),
        )


@dataclass
class GraphBatch:
    labels: np.ndarray      # (N,) input token ids, masked nodes already replaced
    indptr: np.ndarray      # CSR rows of (A + I)
    indices: np.ndarray
    counts: np.ndarray      # (N, C2) incident edge counts per bond type
    targets: np.ndarray     # (B,) global index of the node read out per graph


def build_batch(graphs: Sequence[GraphArrays], targets: Sequence[int],
                masks: Sequence[int | None], mask_id: int, dtype=np.float64) -> GraphBatch:
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    off = np.zeros(len(graphs) + 1, dtype=np.int64)
    np.cumsum(sizes, out=off[1:])
    n_tot = int(off[-1])
    labels = np.concatenate([g.labels for g in graphs]).astype(np.int64)
    for i, m in enumerate(masks):
        if m is not None:
            labels[off[i] + m] = mask_id
    eu = np.concatenate([g.eu + off[i] for i, g in enumerate(graphs)])
    ev = np.concatenate([g.ev + off[i] for i, g in enumerate(graphs)])
    eb = np.concatenate([g.eb for g in graphs])
    loops = np.arange(n_tot, dtype=np.int64)
    src = np.concatenate([eu, ev, loops])
    dst = np.concatenate([ev, eu, loops])
    order = np.lexsort((src, dst))
    indices = src[order]
    indptr = np.zeros(n_tot + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n_tot), out=indptr[1:])
    counts = np.zeros((n_tot, C2), dtype=dtype)
    np.add.at(counts, (eu, eb), 1.0)
    np.add.at(counts, (ev, eb), 1.0)
    tg = np.array([off[i] + t for i, t in enumerate(targets)], dtype=np.int64)
    return GraphBatch(labels, indptr, indices, counts, tg)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class GnnParams:
    kind: str            # "mgnn" | "bgnn"
    c1: int
    d: int = 300
    K: int = 5
    hidden: int = HEAD_HIDDEN
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def out_dim(self) -> int:
        return self.c1 if self.kind == "mgnn" else 1

    @property
    def mask_id(self) -> int:
        return self.c1

    @property
    def dtype(self):
        return self.arrays["emb"].dtype

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d = self.d
        s = {"emb": (self.c1 + 1, d), "edge": (C2, d)}
        for k in range(self.K):
            s[f"W1_{k}"] = (2 * d, d)
            s[f"b1_{k}"] = (d,)
            s[f"W2_{k}"] = (d, d)
            s[f"b2_{k}"] = (d,)
        s["H1"] = (d, self.hidden)
        s["c1"] = (self.hidden,)
        s["H2"] = (self.hidden, self.out_dim)
        s["c2"] = (self.out_dim,)
        return s

    def check(self):
        for name, shape in self.shapes().items():
            a = self.arrays.get(name)
            if a is None or a.shape != shape:
                got = None if a is None else a.shape
                raise ValueError(f"parameter {name}: expected shape {shape}, got {got}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"parameter {name} has non-finite entries")

    @classmethod
    def init(cls, kind: str, c1: int, d: int = 300, K: int = 5, hidden: int = HEAD_HIDDEN,
             rng: np.random.Generator | None = None, dtype=np.float64) -> "GnnParams":
        if kind not in ("mgnn", "bgnn"):
            raise ValueError(f"unknown model kind {kind!r}")
        rng = rng or np.random.default_rng(0)
        p = cls(kind, c1, d, K, hidden)
        for name, shape in p.shapes().items():
            if len(shape) == 1:
                a = np.zeros(shape)
            elif name in ("emb", "edge"):
                a = rng.normal(0.0, 1.0 / math.sqrt(shape[1]), size=shape)
            else:
                lim = math.sqrt(6.0 / (shape[0] + shape[1]))
                a = rng.uniform(-lim, lim, size=shape)
            p.arrays[name] = a.astype(dtype)
        return p

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def astype(self, dtype) -> "GnnParams":
        return GnnParams(self.kind, self.c1, self.d, self.K, self.hidden,
                         {k: v.astype(dtype) for k, v in self.arrays.items()})


# ---------------------------------------------------------------------------
# forward / backward


def _relu(x):
    return np.maximum(x, 0.0)


def encode(params: GnnParams, batch: GraphBatch, keep: bool = False):
    """Run the K message-passing rounds; returns final embeddings (and cache)."""
    a = params.arrays
    d = params.d
    if batch.labels.max(initial=0) > params.c1 or batch.counts.shape[1] != a["edge"].shape[0]:
        raise ValueError("batch does not match parameter shapes")
    h = a["emb"][batch.labels]
    ec = batch.counts.astype(h.dtype) @ a["edge"]
    cache = []
    for k in range(params.K):
        m = _kernels.csr_aggregate(batch.indptr, batch.indices, h)
        z = np.empty((h.shape[0], 2 * d), dtype=h.dtype)
        z[:, :d] = m
        z[:, d:] = ec
        a1 = z @ a[f"W1_{k}"] + a[f"b1_{k}"]
        r1 = _relu(a1)
        a2 = r1 @ a[f"W2_{k}"] + a[f"b2_{k}"]
        h = _relu(a2)
        if keep:
            cache.append((z, a1, r1, a2))
    return (h, cache) if keep else h


def gnn_forward(params: GnnParams, g: MolGraph, masked: int | None = None) -> np.ndarray:
    """Final per-node embeddings h^(K) of ``g`` (``masked`` gets the mask token)."""
    batch = build_batch([GraphArrays.from_graph(g)], [0], [masked], params.mask_id, params.dtype)
    return encode(params, batch)


def head(params: GnnParams, hv: np.ndarray, keep: bool = False):
    a = params.arrays
    t = hv @ a["H1"] + a["c1"]
    rt = _relu(t)
    logits = rt @ a["H2"] + a["c2"]
    return (logits, (hv, t, rt)) if keep else logits


def forward_logits(params: GnnParams, batch: GraphBatch) -> np.ndarray:
    h = encode(params, batch)
    return head(params, h[batch.targets])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mgnn_loss(probs, y) -> float:
    """Cross entropy ``-sum y log p`` (``y`` one-hot or class index), averaged over rows."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.asarray(y)
    if y.ndim == 0 or (y.ndim == 1 and probs.shape[0] == y.shape[0] and y.dtype.kind in "iu"):
        idx = np.atleast_1d(y).astype(np.int64)
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(idx)), idx] = 1.0
    else:
        onehot = np.atleast_2d(y).astype(np.float64)
    return float(-(onehot * np.log(np.maximum(probs, EPS))).sum(axis=1).mean())


def bgnn_loss(zhat, z) -> float:
    zhat = np.atleast_1d(np.asarray(zhat, dtype=np.float64))
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    out = -z * np.log(np.maximum(zhat, EPS)) - (1 - z) * np.log(np.maximum(1 - zhat, EPS))
    return float(out.mean())


def loss_and_grad(params: GnnParams, batch: GraphBatch, y: np.ndarray):
    """Mean loss over the batch targets and gradients for every parameter.

    ``y`` holds class indices (mgnn) or 0/1 labels (bgnn).
    """
    a = params.arrays
    d = params.d
    h, cache = encode(params, batch, keep=True)
    hv = h[batch.targets]
    logits, (hv, t, rt) = head(params, hv, keep=True)
    B = logits.shape[0]
    if params.kind == "mgnn":
        p = softmax(logits)
        py = p[np.arange(B), y]
        loss = float(-np.log(np.maximum(py, EPS)).mean())
        dlogits = p.copy()
        dlogits[np.arange(B), y] -= 1.0
        dlogits[py < EPS] = 0.0
    else:
        zhat = sigmoid(logits[:, 0])
        yf = y.astype(np.float64)
        loss = bgnn_loss(zhat, yf)
        dl = zhat - yf
        clipped = ((yf == 1) & (zhat < EPS)) | ((yf == 0) & (1 - zhat < EPS))
        dl[clipped] = 0.0
        dlogits = dl[:, None]
    dlogits = (dlogits / B).astype(h.dtype)

    g = {}
    g["H2"] = rt.T @ dlogits
    g["c2"] = dlogits.sum(axis=0)
    dt = (dlogits @ a["H2"].T) * (t > 0)
    g["H1"] = hv.T @ dt
    g["c1"] = dt.sum(axis=0)
    dhv = dt @ a["H1"].T
    dh = np.zeros_like(h)
    np.add.at(dh, batch.targets, dhv)
    d_ec = np.zeros((h.shape[0], d), dtype=h.dtype)
    for k in reversed(range(params.K)):
        z, a1, r1, a2 = cache[k]
        da2 = dh * (a2 > 0)
        g[f"W2_{k}"] = r1.T @ da2
        g[f"b2_{k}"] = da2.sum(axis=0)
        da1 = (da2 @ a[f"W2_{k}"].T) * (a1 > 0)
        g[f"W1_{k}"] = z.T @ da1
        g[f"b1_{k}"] = da1.sum(axis=0)
        dz = da1 @ a[f"W1_{k}"].T
        d_ec += dz[:, d:]
        # A + I is symmetric, so the transpose product is another aggregation
        dh = _kernels.csr_aggregate(batch.indptr, batch.indices, np.ascontiguousarray(dz[:, :d]))
    g["edge"] = batch.counts.astype(h.dtype).T @ d_ec
    demb = np.zeros_like(a["emb"])
    np.add.at(demb, batch.labels, dh)
    g["emb"] = demb
    return loss, g


def loss_only(params: GnnParams, batch: GraphBatch, y: np.ndarray) -> float:
    logits = forward_logits(params, batch)
    if params.kind == "mgnn":
        return mgnn_loss(softmax(logits), y)
    return bgnn_loss(sigmoid(logits[:, 0]), y)


# ---------------------------------------------------------------------------
# prediction


def _check_kind(params: GnnParams, kind: str):
    if params.kind != kind:
        raise ValueError(f"expected {kind} parameters, got {params.kind}")


def mgnn_predict_arrays(params: GnnParams, items: Sequence[tuple[GraphArrays, int]]) -> np.ndarray:
    """Masked-substructure distributions, one row per ``(graph, node)`` item."""
    _check_kind(params, "mgnn")
    if not items:
        return np.zeros((0, params.c1))
    batch = build_batch([g for g, _ in items], [v for _, v in items], [v for _, v in items],
                        params.mask_id, params.dtype)
    return softmax(forward_logits(params, batch).astype(np.float64))


def bgnn_predict_arrays(params: GnnParams, items: Sequence[tuple[GraphArrays, int]]) -> np.ndarray:
    _check_kind(params, "bgnn")
    if not items:
        return np.zeros(0)
    batch = build_batch([g for g, _ in items], [v for _, v in items], [None] * len(items),
                        params.mask_id, params.dtype)
    # saturated logits would round to exactly 0 or 1; keep the open interval
    z = sigmoid(forward_logits(params, batch)[:, 0].astype(np.float64))
    return np.clip(z, EPS, 1.0 - EPS)


def mgnn_predict(params: GnnParams, g: MolGraph, v: int) -> np.ndarray:
    if not 0 <= v < g.n:
        raise IndexError(f"node {v} not in graph")
    return mgnn_predict_arrays(params, [(GraphArrays.from_graph(g), v)])[0]


def bgnn_predict(params: GnnParams, g: MolGraph, v: int) -> float:
    if not 0 <= v < g.n:
        raise IndexError(f"node {v} not in graph")
    return float(bgnn_predict_arrays(params, [(GraphArrays.from_graph(g), v)])[0])


# ---------------------------------------------------------------------------
# labels and corpora


def make_bgnn_labels(g: MolGraph) -> list[tuple[int, int]]:
    leaves = leaf_nodes(g)
    out = []
    for i in range(g.n):
        if i in leaves:
            out.append((i, 0))
        elif any(j in leaves for j in g.neighbors(i)):
            out.append((i, 1))
    return out


def _fnv(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode():
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def rule_label(vocab: SubstructureVocab, bond_orders, nbr_degrees) -> int | None:
    """Deterministic label for a node's local context, among entries that fit it."""
    total = sum(bond_orders)
    all_single = all(b == 1.0 for b in bond_orders)
    deg = len(bond_orders)
    feasible = [e.id for e in vocab
                if (not e.is_ring and e.max_valence >= total)
                or (e.is_ring and all_single and deg <= e.attachment_capacity)]
    if not feasible:
        return None
    key = f"{sorted(bond_orders)}|{sorted(nbr_degrees)}"
    return feasible[_fnv(key) % len(feasible)]


def synthetic_rule_corpus(vocab: SubstructureVocab, n_graphs: int, seed: int = 0,
                          min_nodes: int = 3, max_nodes: int = 12, max_degree: int = 3,
                          p_double: float = 0.2) -> list[MolGraph]:
    """Random trees whose node labels are a fixed function of local structure.

    A node's label is determined by the multiset of its incident bond orders
    and the multiset of its neighbours' degrees, so a masked node is exactly
    recoverable from its surroundings.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_graphs:
        n = int(rng.integers(min_nodes, max_nodes + 1))
        deg = [0] * n
        edges = []
        for i in range(1, n):
            cands = [j for j in range(i) if deg[j] < max_degree]
            j = cands[int(rng.integers(len(cands)))]
            b = BondType.DOUBLE if rng.random() < p_double else BondType.SINGLE
            edges.append((j, i, b))
            deg[i] += 1
            deg[j] += 1
        inc = [[] for _ in range(n)]
        for u, v, b in edges:
            inc[u].append((v, b))
            inc[v].append((u, b))
        labels = []
        for i in range(n):
            lab = rule_label(vocab, [b.order for _, b in inc[i]], [deg[j] for j, _ in inc[i]])
            if lab is None:
                break
            labels.append(lab)
        if len(labels) != n:
            continue
        next_pos = [0] * n
        full = []
        for u, v, b in edges:
            ps = []
            for x in (u, v):
                ent = vocab[labels[x]]
                if ent.is_ring:
                    free = ent.template.free
                    while free[next_pos[x]] < 1:
                        next_pos[x] += 1
                    ps.append(next_pos[x])
                    next_pos[x] += 1
                else:
                    ps.append(-1)
            full.append((u, v, b, ps[0], ps[1]))
        g = MolGraph(vocab, labels, full)
        if is_valid(g):
            out.append(g)
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0
    d: int = 300
    K: int = 5
    hidden: int = HEAD_HIDDEN
    dtype: str = "float64"
    clip_norm: float | None = None   # global gradient-norm clip, off by default

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


class Adam:
    def __init__(self, params: GnnParams, lr: float, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.p = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], clip_norm: float | None = None):
        if clip_norm is not None:
            norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if norm > clip_norm:
                grads = {k: g * (clip_norm / norm) for k, g in grads.items()}
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for name in sorted(grads):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            self.p.arrays[name] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(g.dtype)


@dataclass
class TrainHistory:
    mgnn_loss: list[float] = field(default_factory=list)
    bgnn_loss: list[float] = field(default_factory=list)
    seconds: float = 0.0


def pretrain(corpus: Sequence[MolGraph], cfg: TrainConfig | None = None,
             log=None, on_epoch=None) -> tuple[GnnParams, GnnParams, TrainHistory]:
    """Train the two predictors on unlabeled molecules.

    Each epoch masks one random node per molecule (mgnn) and picks one random
    labeled node per molecule (bgnn); the two networks share nothing.
    """
    cfg = cfg or TrainConfig()
    if not corpus:
        raise ValueError("training corpus is empty")
    vocab = corpus[0].vocab
    c1 = len(vocab)
    dtype = np.dtype(cfg.dtype)
    ss = np.random.SeedSequence(cfg.seed)
    s_init_m, s_init_b, s_train = ss.spawn(3)
    mp = GnnParams.init("mgnn", c1, cfg.d, cfg.K, cfg.hidden, np.random.default_rng(s_init_m), dtype)
    bp = GnnParams.init("bgnn", c1, cfg.d, cfg.K, cfg.hidden, np.random.default_rng(s_init_b), dtype)
    rng = np.random.default_rng(s_train)
    arrays = [GraphArrays.from_graph(g) for g in corpus]
    blabels = [make_bgnn_labels(g) for g in corpus]
    b_ok = [i for i, lab in enumerate(blabels) if lab]
    opt_m, opt_b = Adam(mp, cfg.lr), Adam(bp, cfg.lr)
    hist = TrainHistory()
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(arrays))
        masks = [int(rng.integers(arrays[i].n)) for i in order]
        tot, cnt = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            mk = masks[s:s + cfg.batch_size]
            gs = [arrays[i] for i in idx]
            batch = build_batch(gs, mk, mk, mp.mask_id, dtype)
            y = np.array([corpus[i].nodes[m] for i, m in zip(idx, mk)], dtype=np.int64)
            loss, grads = loss_and_grad(mp, batch, y)
            opt_m.step(grads, cfg.clip_norm)
            tot += loss * len(idx)
            cnt += len(idx)
        hist.mgnn_loss.append(tot / cnt)
        border = [b_ok[i] for i in rng.permutation(len(b_ok))]
        picks = [blabels[i][int(rng.integers(len(blabels[i])))] for i in border]
        tot, cnt = 0.0, 0
        for s in range(0, len(border), cfg.batch_size):
            idx = border[s:s + cfg.batch_size]
            pk = picks[s:s + cfg.batch_size]
            batch = build_batch([arrays[i] for i in idx], [v for v, _ in pk], [None] * len(idx),
                                bp.mask_id, dtype)
            y = np.array([z for _, z in pk], dtype=np.int64)
            loss, grads = loss_and_grad(bp, batch, y)
            opt_b.step(grads, cfg.clip_norm)
            tot += loss * len(idx)
            cnt += len(idx)
        hist.bgnn_loss.append(tot / max(cnt, 1))
        if on_epoch is not None:
            on_epoch(epoch, mp, bp)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs}: mgnn {hist.mgnn_loss[-1]:.4f} "
                f"bgnn {hist.bgnn_loss[-1]:.4f} ({time.perf_counter() - t0:.1f}s)")
    hist.seconds = time.perf_counter() - t0
    return mp, bp, hist


# ---------------------------------------------------------------------------
# evaluation


def masked_accuracy(params: GnnParams, graphs: Iterable[MolGraph], chunk: int = 512) -> float:
    items = []
    truth = []
    for g in graphs:
        ga = GraphArrays.from_graph(g)
        for v in range(g.n):
            items.append((ga, v))
            truth.append(g.nodes[v])
    if not items:
        return 0.0
    pred = np.concatenate([mgnn_predict_arrays(params, items[i:i + chunk]).argmax(axis=1)
                           for i in range(0, len(items), chunk)])
    return float((pred == np.array(truth)).mean())


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    from scipy.stats import rankdata

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    npos, nneg = labels.sum(), (~labels).sum()
    if npos == 0 or nneg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - npos * (npos + 1) / 2) / (npos * nneg))


def expansion_auc(params: GnnParams, graphs: Iterable[MolGraph], chunk: int = 512) -> float:
    items, labels = [], []
    for g in graphs:
        ga = GraphArrays.from_graph(g)
        for v, z in make_bgnn_labels(g):
            items.append((ga, v))
            labels.append(z)
    scores = np.concatenate([bgnn_predict_arrays(params, items[i:i + chunk])
                             for i in range(0, len(items), chunk)])
    return roc_auc(scores, labels)


# ---------------------------------------------------------------------------
# checkpoints
#
# A checkpoint is an uncompressed ``.npz`` archive holding every parameter
# array under its name plus ``__meta__``, a JSON string with the format
# version, model kind, dimensions and the vocabulary labels it was trained on.


def save_checkpoint(params: GnnParams, path, vocab: SubstructureVocab | None = None) -> Path:
    path = Path(path)
    meta = {"version": CHECKPOINT_VERSION, "kind": params.kind, "c1": params.c1, "d": params.d,
            "K": params.K, "hidden": params.hidden, "dtype": str(params.dtype),
            "vocab": list(vocab.labels) if vocab is not None else None}
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True)), **params.arrays}
    # fixed member timestamps keep reruns byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    return path


def load_checkpoint(path, vocab: SubstructureVocab | None = None) -> GnnParams:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        if vocab is not None and meta.get("vocab") is not None and list(vocab.labels) != meta["vocab"]:
            raise ValueError(f"{path}: checkpoint was trained on a different vocabulary")
        p = GnnParams(meta["kind"], meta["c1"], meta["d"], meta["K"], meta["hidden"],
                      {k: z[k].copy() for k in z.files if k != "__meta__"})
    p.check()
    return p


# ---------------------------------------------------------------------------
# model pairs used by the proposal machinery


class UniformModels:
    """Stand-in predictors: uniform substructure distribution, expansion 0.5."""

    def __init__(self, c1: int, p_expand: float = 0.5):
        if not 0.0 < p_expand < 1.0:
            raise ValueError("p_expand must lie in (0, 1)")
        self.c1 = c1
        self.p_expand = p_expand
        self._row = np.full(c1, 1.0 / c1)

    def mgnn(self, g: MolGraph, v: int) -> np.ndarray:
        return self._row

    def mgnn_all(self, g: MolGraph) -> np.ndarray:
        return np.tile(self._row, (g.n, 1))

    def mgnn_leaf(self, g: MolGraph, u: int) -> np.ndarray:
        return self._row

    def bgnn(self, g: MolGraph, u: int) -> float:
        return self.p_expand

    def bgnn_all(self, g: MolGraph) -> np.ndarray:
        return np.full(g.n, self.p_expand)


class GnnModels:
    """Trained mgnn/bgnn pair with per-graph prediction caches.

    Predictions for all nodes of a graph are computed in one batched
    forward pass and memoized by the graph's exact structure.
    """

    def __init__(self, mparams: GnnParams, bparams: GnnParams, cache_size: int = 200_000):
        _check_kind(mparams, "mgnn")
        _check_kind(bparams, "bgnn")
        if mparams.c1 != bparams.c1:
            raise ValueError("mgnn and bgnn were built for different vocabularies")
        self.mp, self.bp = mparams, bparams
        self.c1 = mparams.c1
        self.cache_size = cache_size
        self._m: dict = {}
        self._leaf: dict = {}
        self._b: dict = {}

    def _store(self, d: dict, key, value):
        if len(d) >= self.cache_size:
            d.clear()
        d[key] = value
        return value

    def mgnn_all(self, g: MolGraph) -> np.ndarray:
        hit = self._m.get(g.struct)
        if hit is None:
            ga = GraphArrays.from_graph(g)
            hit = self._store(self._m, g.struct,
                              mgnn_predict_arrays(self.mp, [(ga, v) for v in range(g.n)]))
        return hit

    def mgnn(self, g: MolGraph, v: int) -> np.ndarray:
        return self.mgnn_all(g)[v]

    def mgnn_leaf(self, g: MolGraph, u: int) -> np.ndarray:
        """Distribution for a new masked leaf joined to ``u`` by a single bond."""
        hit = self._leaf.get(g.struct)
        if hit is None:
            ga = GraphArrays.from_graph(g)
            items = [(ga.with_leaf(a), g.n) for a in range(g.n)]
            hit = self._store(self._leaf, g.struct, mgnn_predict_arrays(self.mp, items))
        return hit[u]

    def bgnn_all(self, g: MolGraph) -> np.ndarray:
        hit = self._b.get(g.struct)
        if hit is None:
            ga = GraphArrays.from_graph(g)
            hit = self._store(self._b, g.struct,
                              bgnn_predict_arrays(self.bp, [(ga, v) for v in range(g.n)]))
        return hit

    def bgnn(self, g: MolGraph, u: int) -> float:
        return float(self.bgnn_all(g)[u])

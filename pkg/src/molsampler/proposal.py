"""Replace / add / delete edits and their exact proposal probabilities.

Every sampled edit goes through the same deterministic completion step
that :func:`enumerate_moves` uses, so the probability of any particular
path (site, drawn substructure, completion) is known exactly.

Completion rules:

* atom-atom bonds take the bond type with the highest target density
  (ties go to the lower bond type); when a replaced node has several
  neighbours the bonds are chosen one edge at a time, in neighbour order,
  starting from all-single;
* any edge touching a ring node is expanded over every legal attachment
  position and bond type, duplicates removed by canonical key, and one
  result is drawn uniformly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .chem import (
    enumerate_bond_types,
    free_positions,
    is_valid,
    locally_valid,
    _orbit_reps,
)
from .molgraph import ALL_BONDS, BondType, MolGraph, canonical_key, leaf_nodes
from .properties import NEG_INF, TargetDistConfig, log_target_density

REPLACE, ADD, DELETE = "replace", "add", "delete"
OPS = (REPLACE, ADD, DELETE)
REVERSE_OP = {REPLACE: REPLACE, ADD: DELETE, DELETE: ADD}


@dataclass(frozen=True)
class ProposalConfig:
    bond_types: tuple[BondType, ...] = ALL_BONDS
    add_mode: str = "bernoulli"        # or "threshold"
    add_threshold: float = 0.5
    max_ring_combos: int = 4096

    def __post_init__(self):
        if self.add_mode not in ("bernoulli", "threshold"):
            raise ValueError(f"add_mode must be bernoulli or threshold, got {self.add_mode!r}")
        if not self.bond_types:
            raise ValueError("at least one bond type must be allowed")
        object.__setattr__(self, "bond_types", tuple(BondType(b) for b in self.bond_types))


DEFAULT_PROPOSAL = ProposalConfig()


@dataclass
class Proposal:
    candidate: MolGraph
    op: str
    site: tuple[int, int | None]       # (v, anchor u) ; u only for add / delete
    terms: dict[str, float] = field(default_factory=dict)
    prob: float = 1.0                  # path probability given the op (site choice included)
    log_density: float = NEG_INF
    log_weight: float = NEG_INF
    key: str | None = None


@dataclass
class MoveSet:
    """All paths of one operation from one state; ``fail_mass`` is the
    probability that the operation produces nothing."""

    paths: list[Proposal]
    fail_mass: float
    _by_key: dict | None = field(default=None, repr=False, compare=False)

    def total(self) -> float:
        return sum(p.prob for p in self.paths) + self.fail_mass

    def marginal(self, key: str) -> float:
        if self._by_key is None:
            acc: dict[str, float] = {}
            for p in self.paths:   # summed in path order, as a plain loop would
                acc[p.key] = acc.get(p.key, 0.0) + p.prob
            self._by_key = acc
        return self._by_key.get(key, 0.0)


def _draw(p: np.ndarray, u: float) -> int:
    cum = np.cumsum(p)
    i = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(i, len(p) - 1)


def has_capacity(g: MolGraph, u: int) -> bool:
    ent = g.entry(u)
    if ent.is_ring:
        return g.degree(u) < ent.attachment_capacity and bool(free_positions(g, u))
    used = sum(e.bond.order for e in g.incident(u))
    return used + 1.0 <= ent.max_valence + 1e-9


# ---------------------------------------------------------------------------
# deterministic completions


def _best_bond(graphs: list[MolGraph], target: TargetDistConfig) -> MolGraph:
    best, best_lp = graphs[0], log_target_density(target, graphs[0])
    for h in graphs[1:]:
        lp = log_target_density(target, h)
        if lp > best_lp:
            best, best_lp = h, lp
    return best


def _dedupe(graphs) -> list[MolGraph]:
    seen = {}
    for h in graphs:
        k = canonical_key(h, cap=None)
        if k not in seen:
            seen[k] = h
    return list(seen.values())


def replace_completions(y: MolGraph, v: int, s_new: int, target: TargetDistConfig,
                        cfg: ProposalConfig = DEFAULT_PROPOSAL) -> list[MolGraph]:
    if s_new == y.nodes[v]:
        return [y]
    vocab = y.vocab
    ent = vocab[s_new]
    inc = sorted(y.incident(v), key=lambda e: e.other(v))
    others = [(e.other(v), e.pos_at(e.other(v))) for e in inc]
    kept = [e for e in y.edges if v not in (e.u, e.v)]
    nodes = list(y.nodes)
    nodes[v] = s_new
    if not ent.is_ring:
        h = y.with_nodes_edges(nodes, kept + [(v, w, BondType.SINGLE, -1, pw) for w, pw in others])
        if not locally_valid(h, [v] + [w for w, _ in others]):
            return []
        for w, pw in others:
            opts = enumerate_bond_types(h, v, w, -1, pw, cfg.bond_types, local=True)
            if not opts:
                return []
            h = _best_bond([h.with_edge(v, w, b, -1, pw) for b in opts], target)
        return [h] if is_valid(h) else []
    if len(others) > ent.attachment_capacity:
        return []
    base = y.with_nodes_edges(nodes, kept)
    out: list[MolGraph] = []
    budget = [cfg.max_ring_combos]

    def grow(h: MolGraph, k: int):
        if budget[0] <= 0:
            return
        if k == len(others):
            budget[0] -= 1
            if is_valid(h):
                out.append(h)
            return
        w, pw = others[k]
        positions = free_positions(h, v)
        if k == 0:
            positions = _orbit_reps(h, v, positions)
        for pv in positions:
            for b in cfg.bond_types:
                h2 = h.with_edge(v, w, b, pv, pw)
                if locally_valid(h2, (v, w)):
                    grow(h2, k + 1)

    grow(base, 0)
    return _dedupe(out)


def add_completions(y: MolGraph, u: int, s_new: int, target: TargetDistConfig | None,
                    cfg: ProposalConfig = DEFAULT_PROPOSAL) -> list[MolGraph]:
    if not has_capacity(y, u):
        return []
    vocab = y.vocab
    new_ring = vocab[s_new].is_ring
    anchor_ring = y.entry(u).is_ring
    v = y.n
    if not new_ring and not anchor_ring:
        h0 = y.add_leaf(u, s_new, BondType.SINGLE)
        opts = enumerate_bond_types(h0, u, v, -1, -1, cfg.bond_types)
        if not opts:
            return []
        return [_best_bond([h0.with_edge(u, v, b) for b in opts], target)]
    pu_list = _orbit_reps(y, u, free_positions(y, u)) if anchor_ring else [-1]
    if new_ring:
        t = vocab[s_new].template
        pv_list = [p for p in range(t.size) if t.free[p] >= 1]
        pv_list = [p for p in pv_list if all(s[p] >= p for s in t.symmetries)]
    else:
        pv_list = [-1]
    cands = []
    for pu, pv in itertools.product(pu_list, pv_list):
        for b in cfg.bond_types:
            h = y.add_leaf(u, s_new, b, pu, pv)
            if is_valid(h):
                cands.append(h)
    return _dedupe(cands)


# ---------------------------------------------------------------------------
# sampled proposals


def _finish(p: Proposal, target: TargetDistConfig) -> Proposal:
    p.log_density = log_target_density(target, p.candidate)
    return p


def _memo(memo: dict | None, key, fn):
    if memo is None:
        return fn()
    out = memo.get(key)
    if out is None:
        out = memo[key] = fn()
    return out


def propose_replace(y: MolGraph, v: int, models, rng: np.random.Generator,
                    target: TargetDistConfig, cfg: ProposalConfig = DEFAULT_PROPOSAL,
                    memo: dict | None = None) -> Proposal | None:
    """Mask ``v``, draw a new substructure from mgnn, rebuild its bonds.

    ``memo`` caches completion lists for one fixed target and config.
    """
    m = models.mgnn(y, v)
    s_new = _draw(m, rng.random())
    cands = _memo(memo, (REPLACE, y.struct, v, s_new),
                  lambda: replace_completions(y, v, s_new, target, cfg))
    if not cands:
        return None
    k = int(rng.integers(len(cands))) if len(cands) > 1 else 0
    terms = {"m_old": float(m[y.nodes[v]]), "m_new": float(m[s_new])}
    return _finish(Proposal(cands[k], REPLACE, (v, None), terms, float(m[s_new]) / len(cands)), target)


def expand_decision(models, y: MolGraph, u: int, cfg: ProposalConfig) -> float:
    """Probability that anchor ``u`` is chosen to grow a leaf."""
    z = models.bgnn(y, u)
    if cfg.add_mode == "threshold":
        return 1.0 if z >= cfg.add_threshold else 0.0
    return z


def propose_add(y: MolGraph, u: int, models, rng: np.random.Generator,
                target: TargetDistConfig, cfg: ProposalConfig = DEFAULT_PROPOSAL,
                memo: dict | None = None) -> Proposal | None:
    """Grow a leaf at ``u`` if the expansion draw says so."""
    if not has_capacity(y, u):
        return None
    p_grow = expand_decision(models, y, u, cfg)
    if not rng.random() < p_grow:
        return None
    m = models.mgnn_leaf(y, u)
    s_new = _draw(m, rng.random())
    cands = _memo(memo, (ADD, y.struct, u, s_new),
                  lambda: add_completions(y, u, s_new, target, cfg))
    if not cands:
        return None
    k = int(rng.integers(len(cands))) if len(cands) > 1 else 0
    terms = {"b": float(models.bgnn(y, u)), "m_new": float(m[s_new])}
    return _finish(Proposal(cands[k], ADD, (y.n, u), terms, p_grow * float(m[s_new]) / len(cands)),
                   target)


def propose_delete(y: MolGraph, v: int, models, target: TargetDistConfig) -> Proposal | None:
    if y.n < 2 or y.degree(v) != 1:
        return None
    u = y.neighbors(v)[0]
    cand = y.remove_node(v)
    u_new = u if u < v else u - 1
    terms = {"b": float(models.bgnn(cand, u_new)), "m_old": float(models.mgnn(y, v)[y.nodes[v]])}
    return _finish(Proposal(cand, DELETE, (v, u), terms, 1.0), target)


def generate_pool(y: MolGraph, models, rng: np.random.Generator, target: TargetDistConfig,
                  cfg: ProposalConfig = DEFAULT_PROPOSAL) -> list[Proposal]:
    """One replace draw per node, one add draw per node with spare capacity,
    and every leaf deletion; only valid candidates are kept."""
    pool = []
    for v in range(y.n):
        p = propose_replace(y, v, models, rng, target, cfg)
        if p is not None:
            pool.append(p)
    for u in range(y.n):
        if has_capacity(y, u):
            p = propose_add(y, u, models, rng, target, cfg)
            if p is not None:
                pool.append(p)
    if y.n >= 2:
        for v in sorted(leaf_nodes(y)):
            p = propose_delete(y, v, models, target)
            if p is not None:
                pool.append(p)
    return [p for p in pool if is_valid(p.candidate)]


# ---------------------------------------------------------------------------
# exact enumeration


def enumerate_moves(y: MolGraph, op: str, models, target: TargetDistConfig,
                    cfg: ProposalConfig = DEFAULT_PROPOSAL) -> MoveSet:
    """Every path of ``op`` from ``y`` with its probability (site choice
    included), plus the probability mass of proposal failure."""
    n = y.n
    paths: list[Proposal] = []
    fail = 0.0
    if op == REPLACE:
        m_all = models.mgnn_all(y)
        for v in range(n):
            m = m_all[v]
            for s_new in range(len(m)):
                if m[s_new] <= 0.0:
                    continue
                base = m[s_new] / n
                cands = replace_completions(y, v, s_new, target, cfg)
                if not cands:
                    fail += base
                    continue
                terms = {"m_old": float(m[y.nodes[v]]), "m_new": float(m[s_new])}
                for c in cands:
                    paths.append(Proposal(c, REPLACE, (v, None), dict(terms), base / len(cands)))
    elif op == ADD:
        for u in range(n):
            if not has_capacity(y, u):
                fail += 1.0 / n
                continue
            p_grow = expand_decision(models, y, u, cfg)
            fail += (1.0 - p_grow) / n
            if p_grow <= 0.0:
                continue
            m = models.mgnn_leaf(y, u)
            b = float(models.bgnn(y, u))
            for s_new in range(len(m)):
                if m[s_new] <= 0.0:
                    continue
                base = p_grow * m[s_new] / n
                cands = add_completions(y, u, s_new, target, cfg)
                if not cands:
                    fail += base
                    continue
                for c in cands:
                    paths.append(Proposal(c, ADD, (n, u), {"b": b, "m_new": float(m[s_new])},
                                          base / len(cands)))
    elif op == DELETE:
        leaves = sorted(leaf_nodes(y)) if n >= 2 else []
        if not leaves:
            fail = 1.0
        for v in leaves:
            p = propose_delete(y, v, models, target)
            p.prob = 1.0 / len(leaves)
            paths.append(p)
    else:
        raise ValueError(f"unknown operation {op!r}")
    for p in paths:
        p.key = canonical_key(p.candidate, cap=None)
        if p.log_density == NEG_INF:
            p.log_density = log_target_density(target, p.candidate)
    return MoveSet(paths, fail)

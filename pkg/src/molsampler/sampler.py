"""Metropolis-Hastings kernel over graph edits and the population pipeline.

Two weight conventions are available:

``model_ratio``
    the replace / add / delete ratios built from the model probabilities
    recorded on the proposal (see :func:`weight_replace` and friends);
``textbook_mh``
    ``p(Y') q(Y'->Y) / (p(Y) q(Y->Y'))`` where ``q`` is the exact
    probability, summed over every path, that the operation turns one
    molecule into the other (up to isomorphism).  This is the convention
    under which the single-chain kernel leaves the target invariant.

``mh_chain`` mode runs one Markov chain; ``population`` mode runs the
multi-particle loop with greedy burn-in and weighted resampling.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .chem import is_valid
from .molgraph import MolGraph, canonical_key, leaf_nodes
from .properties import NEG_INF, TargetDistConfig, log_target_density
from .proposal import (
    ADD,
    DEFAULT_PROPOSAL,
    DELETE,
    OPS,
    REPLACE,
    REVERSE_OP,
    MoveSet,
    Proposal,
    ProposalConfig,
    enumerate_moves,
    generate_pool,
    propose_add,
    propose_delete,
    propose_replace,
)

CONVENTIONS = ("model_ratio", "textbook_mh")
MODES = ("mh_chain", "population")


@dataclass(frozen=True)
class KernelConfig:
    gamma: tuple[float, float, float] = (0.5, 0.25, 0.25)
    weight_convention: str = "textbook_mh"
    mode: str = "mh_chain"
    allow_unbalanced: bool = False   # permit gamma_add != gamma_delete (negative controls)

    def __post_init__(self):
        g = tuple(float(x) for x in self.gamma)
        object.__setattr__(self, "gamma", g)
        if len(g) != 3 or any(x < 0 or not math.isfinite(x) for x in g):
            raise ValueError("gamma must be three non-negative numbers")
        if abs(sum(g) - 1.0) > 1e-12:
            raise ValueError(f"gamma must sum to 1, got {sum(g)}")
        if not self.allow_unbalanced and abs(g[1] - g[2]) > 1e-12:
            raise ValueError("gamma_add must equal gamma_delete for an invariant kernel")
        if self.weight_convention not in CONVENTIONS:
            raise ValueError(f"weight_convention must be one of {CONVENTIONS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def op_cum(self) -> np.ndarray:
        return np.cumsum(self.gamma)


@dataclass(frozen=True)
class RunConfig:
    N: int = 20
    T_max: int = 10
    T_burnin: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 <= self.T_burnin <= self.T_max:
            raise ValueError("need 0 <= T_burnin <= T_max")


# ---------------------------------------------------------------------------
# move bookkeeping shared by the exact oracle and the single chain


class MoveCache:
    """Memoized move sets keyed by canonical key.

    The first graph seen for a key becomes that class's representative;
    move sets are always computed from the representative so the chain is a
    well-defined Markov chain on isomorphism classes.
    """

    def __init__(self, models, target: TargetDistConfig, cfg: ProposalConfig = DEFAULT_PROPOSAL):
        self.models, self.target, self.cfg = models, target, cfg
        self.reps: dict[str, MolGraph] = {}
        self._moves: dict[tuple[str, str], MoveSet] = {}
        self._keys: dict = {}
        self.completions: dict = {}

    def key(self, g: MolGraph) -> str:
        k = self._keys.get(g.struct)
        if k is None:
            if len(self._keys) > 1_000_000:
                self._keys.clear()
            k = self._keys[g.struct] = canonical_key(g, cap=None)
        return k

    def representative(self, g: MolGraph) -> tuple[str, MolGraph]:
        k = self.key(g)
        rep = self.reps.setdefault(k, g)
        return k, rep

    def moves(self, g: MolGraph, op: str) -> MoveSet:
        k, rep = self.representative(g)
        ms = self._moves.get((k, op))
        if ms is None:
            ms = enumerate_moves(rep, op, self.models, self.target, self.cfg)
            for p in ms.paths:
                self.representative(p.candidate)
            self._moves[(k, op)] = ms
        return ms

    def q(self, src: MolGraph, op: str, dst_key: str) -> float:
        return self.moves(src, op).marginal(dst_key)


# ---------------------------------------------------------------------------
# weights


def _delta(target: TargetDistConfig, y: MolGraph, prop: Proposal, lp_y: float | None):
    lp_y = log_target_density(target, y) if lp_y is None else lp_y
    if lp_y == NEG_INF:
        raise ValueError("current state has zero target density")
    lp_new = prop.log_density if prop.log_density != NEG_INF else log_target_density(target, prop.candidate)
    return lp_new - lp_y


def _log(x: float) -> float:
    return math.log(x) if x > 0 else NEG_INF


def log_weight_model_ratio(target: TargetDistConfig, y: MolGraph, prop: Proposal,
                     lp_y: float | None = None) -> float:
    d = _delta(target, y, prop, lp_y)
    if d == NEG_INF:
        return NEG_INF
    t = prop.terms
    if prop.op == REPLACE:
        return d + _log(t["m_new"]) - _log(t["m_old"])
    if prop.op == ADD:
        if t["b"] >= 1.0:
            return math.inf
        return d + _log(t["b"]) + _log(t["m_new"]) - _log(1.0 - t["b"])
    if prop.op == DELETE:
        if t["b"] <= 0.0:
            return math.inf
        return d + _log(1.0 - t["b"]) - _log(t["b"]) - _log(t["m_old"])
    raise ValueError(f"unknown operation {prop.op!r}")


def log_weight_textbook(target: TargetDistConfig, y: MolGraph, prop: Proposal, cache: MoveCache,
                        lp_y: float | None = None) -> float:
    d = _delta(target, y, prop, lp_y)
    if d == NEG_INF:
        return NEG_INF
    ky = cache.key(y)
    kc = prop.key or cache.key(prop.candidate)
    q_fwd = cache.q(y, prop.op, kc)
    q_rev = cache.q(prop.candidate, REVERSE_OP[prop.op], ky)
    if q_fwd <= 0.0:
        raise ValueError("proposal has zero forward probability; bookkeeping mismatch")
    return d + _log(q_rev) - math.log(q_fwd)


def log_weight(kernel: KernelConfig, target: TargetDistConfig, y: MolGraph, prop: Proposal,
               cache: MoveCache | None = None, lp_y: float | None = None) -> float:
    if kernel.weight_convention == "model_ratio":
        return log_weight_model_ratio(target, y, prop, lp_y)
    if cache is None:
        raise ValueError("textbook_mh weights need a MoveCache")
    return log_weight_textbook(target, y, prop, cache, lp_y)


def _check_op(prop: Proposal, op: str):
    if prop.op != op:
        raise ValueError(f"expected a {op} proposal, got {prop.op}")


def weight_replace(target: TargetDistConfig, y: MolGraph, prop: Proposal) -> float:
    _check_op(prop, REPLACE)
    return math.exp(min(log_weight_model_ratio(target, y, prop), 700.0))


def weight_add(target: TargetDistConfig, y: MolGraph, prop: Proposal) -> float:
    _check_op(prop, ADD)
    lw = log_weight_model_ratio(target, y, prop)
    return math.inf if lw == math.inf else math.exp(min(lw, 700.0))


def weight_delete(target: TargetDistConfig, y: MolGraph, prop: Proposal) -> float:
    _check_op(prop, DELETE)
    lw = log_weight_model_ratio(target, y, prop)
    return math.inf if lw == math.inf else math.exp(min(lw, 700.0))


def acceptance(lw: float) -> float:
    return 1.0 if lw >= 0 else math.exp(lw)


# ---------------------------------------------------------------------------
# single chain


@dataclass
class StepInfo:
    op: str
    proposal: Proposal | None
    accepted: bool
    log_weight: float


def mh_step(target: TargetDistConfig, kernel: KernelConfig, y: MolGraph, models,
            rng: np.random.Generator, cache: MoveCache | None = None,
            cfg: ProposalConfig = DEFAULT_PROPOSAL) -> tuple[MolGraph, StepInfo]:
    """One Metropolis-Hastings transition; returns the next state and details."""
    if cache is not None:
        _, y = cache.representative(y)
    op = OPS[min(int(np.searchsorted(kernel.op_cum, rng.random(), side="right")), 2)]
    n = y.n
    prop = None
    memo = cache.completions if cache is not None and cache.target is target and cache.cfg is cfg else None
    if op == REPLACE:
        prop = propose_replace(y, int(rng.integers(n)), models, rng, target, cfg, memo)
    elif op == ADD:
        prop = propose_add(y, int(rng.integers(n)), models, rng, target, cfg, memo)
    else:
        leaves = sorted(leaf_nodes(y)) if n >= 2 else []
        if leaves:
            prop = propose_delete(y, leaves[int(rng.integers(len(leaves)))], models, target)
    if prop is None:
        return y, StepInfo(op, None, False, NEG_INF)
    lw = log_weight(kernel, target, y, prop, cache)
    if rng.random() < acceptance(lw):
        nxt = prop.candidate
        if cache is not None:
            _, nxt = cache.representative(nxt)
        return nxt, StepInfo(op, prop, True, lw)
    return y, StepInfo(op, prop, False, lw)


@dataclass
class ChainRun:
    keys: list[str]                  # state key after every step
    states: dict[str, MolGraph]      # representative per visited key
    proposals: int = 0
    accepted: int = 0
    invalid_proposals: int = 0
    proposed: dict = field(default_factory=dict)   # struct -> distinct proposed graph (audit only)


def run_mh_chain(target: TargetDistConfig, kernel: KernelConfig, models, n_steps: int,
                 rng: np.random.Generator, start: MolGraph | None = None,
                 cfg: ProposalConfig = DEFAULT_PROPOSAL, cache: MoveCache | None = None,
                 audit: bool = True) -> ChainRun:
    """Single chain of ``n_steps`` sampled :func:`mh_step` transitions.

    With ``audit`` every proposed candidate is re-checked for validity
    (memoized per structure), counted in ``invalid_proposals`` and kept,
    one graph per distinct structure, in ``proposed``.
    """
    cache = cache or MoveCache(models, target, cfg)
    y = target.x if start is None else start
    if not is_valid(y):
        raise ValueError("start molecule is not valid")
    k, y = cache.representative(y)
    out = ChainRun([], {k: y})
    checked: dict = {}
    seen = out.proposed
    for _ in range(n_steps):
        y, info = mh_step(target, kernel, y, models, rng, cache, cfg)
        if info.proposal is not None:
            out.proposals += 1
            out.accepted += info.accepted
            if audit:
                c = info.proposal.candidate
                ok = checked.get(c.struct)
                if ok is None:
                    ok = checked[c.struct] = is_valid(c)
                    seen[c.struct] = c
                out.invalid_proposals += not ok
        k = cache.key(y)
        out.states.setdefault(k, y)
        out.keys.append(k)
    return out


# ---------------------------------------------------------------------------
# tabulated chain (exact transition structure, compiled walker)


@dataclass
class ChainTables:
    keys: list[str]
    states: list[MolGraph]
    offsets: np.ndarray
    targets: np.ndarray
    probs: np.ndarray
    accept: np.ndarray
    fail: np.ndarray          # (n_states, 3) failure mass per op
    op_cum: np.ndarray

    @property
    def index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.keys)}


def tabulate(start: MolGraph, kernel: KernelConfig, cache: MoveCache,
             states: list[MolGraph] | None = None, max_states: int = 100_000) -> ChainTables:
    """Exact per-path transition tables.

    With ``states`` given, the table covers exactly that list (candidates
    outside it must have zero target density).  Otherwise the states are
    found by breadth-first search over positive-density moves from ``start``.
    """
    target = cache.target
    if states is None:
        k0, rep0 = cache.representative(start)
        keys, seen = [k0], {k0: 0}
        reps = [rep0]
        dq = deque([rep0])
        while dq:
            g = dq.popleft()
            for op in OPS:
                for p in cache.moves(g, op).paths:
                    if p.key in seen or p.log_density == NEG_INF:
                        continue
                    seen[p.key] = len(keys)
                    keys.append(p.key)
                    reps.append(cache.reps[p.key])
                    dq.append(cache.reps[p.key])
                    if len(keys) > max_states:
                        raise RuntimeError(f"reachable state space exceeds {max_states}")
    else:
        keys, reps = [], []
        for g in states:
            k, rep = cache.representative(g)
            keys.append(k)
            reps.append(rep)
        seen = {k: i for i, k in enumerate(keys)}
    offsets = [0]
    tg, pr, ac = [], [], []
    fail = np.zeros((len(keys), 3))
    for i, g in enumerate(reps):
        lp = log_target_density(target, g)
        for j, op in enumerate(OPS):
            ms = cache.moves(g, op)
            fail[i, j] = ms.fail_mass
            for p in ms.paths:
                if p.log_density == NEG_INF:
                    a, dst = 0.0, i
                else:
                    if p.key not in seen:
                        raise RuntimeError(f"state space not closed: {p.key} reachable from {keys[i]}")
                    a = acceptance(log_weight(kernel, target, g, p, cache, lp))
                    dst = seen[p.key]
                tg.append(dst)
                pr.append(p.prob)
                ac.append(a)
            offsets.append(len(tg))
    return ChainTables(keys, reps, np.array(offsets, dtype=np.int64), np.array(tg, dtype=np.int64),
                       np.array(pr, dtype=np.float64), np.array(ac, dtype=np.float64), fail,
                       np.asarray(kernel.op_cum, dtype=np.float64))


def run_tabulated(tables: ChainTables, n_steps: int, rng: np.random.Generator, start: int = 0):
    """Walk the tabulated chain; returns visited state indices and the move count."""
    u = rng.random((n_steps, 3))
    return _kernels.chain_walk(np.int64(start), tables.op_cum, tables.offsets, tables.targets,
                               tables.probs, tables.accept, u)


def visit_frequencies(visits: np.ndarray, n_states: int) -> np.ndarray:
    return np.bincount(visits, minlength=n_states) / max(len(visits), 1)


# ---------------------------------------------------------------------------
# population pipeline


@dataclass
class PoolEntry:
    graph: MolGraph
    op: str                 # replace | add | delete | keep
    parent: int             # index into the previous Θ
    log_density: float
    log_weight: float
    key: str


@dataclass
class ChainTrace:
    iterations: list[dict] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    invalid_seen: int = 0


def _select_top(pool: list[PoolEntry], n: int) -> list[int]:
    order = sorted(range(len(pool)), key=lambda i: (-pool[i].log_density, pool[i].key, i))
    out, seen = [], set()
    for i in order:
        if pool[i].key in seen or pool[i].log_density == NEG_INF:
            continue
        seen.add(pool[i].key)
        out.append(i)
        if len(out) == n:
            break
    return out


def _resample(pool: list[PoolEntry], n: int, rng: np.random.Generator) -> list[int]:
    lw = np.array([e.log_weight for e in pool], dtype=np.float64)
    lw[np.isnan(lw)] = NEG_INF
    if np.isposinf(lw).any():
        w = np.isposinf(lw).astype(np.float64)
    else:
        top = lw.max()
        w = np.exp(lw - top)
    w /= w.sum()
    return [int(i) for i in _kernels.systematic_resample(w, float(rng.random()), n)]


def run_population(run: RunConfig, kernel: KernelConfig, target: TargetDistConfig, models,
               rng: np.random.Generator | None = None, cfg: ProposalConfig = DEFAULT_PROPOSAL,
               smiles=None):
    """Multi-particle optimization starting from ``target.x``.

    Returns ``(phi, trace)`` where ``phi`` maps canonical key to
    ``(graph, log_density)`` for every molecule ever selected.
    """
    from .smiles import write_smiles

    writer = smiles or write_smiles
    ss = np.random.SeedSequence(run.seed)
    if rng is not None:
        ss = np.random.SeedSequence(int(rng.integers(2**63)))
    x = target.x
    if not is_valid(x):
        raise ValueError("input molecule is not valid")
    cache = MoveCache(models, target, cfg) if kernel.weight_convention == "textbook_mh" else None
    theta = [x]
    theta_lp = [log_target_density(target, x)]
    phi: dict[str, tuple[MolGraph, float]] = {}
    trace = ChainTrace()
    for it in range(run.T_max):
        it_ss = ss.spawn(1)[0]
        member_ss = it_ss.spawn(len(theta) + 1)
        pool: list[PoolEntry] = []
        for pi, (z, lp_z) in enumerate(zip(theta, theta_lp)):
            pool.append(PoolEntry(z, "keep", pi, lp_z, 0.0, canonical_key(z, cap=None)))
            prng = np.random.default_rng(member_ss[pi])
            for prop in generate_pool(z, models, prng, target, cfg):
                if not is_valid(prop.candidate):
                    trace.invalid_seen += 1
                    continue
                lw = log_weight(kernel, target, z, prop, cache, lp_z)
                pool.append(PoolEntry(prop.candidate, prop.op, pi, prop.log_density, lw,
                                      canonical_key(prop.candidate, cap=None)))
        burn = it < run.T_burnin
        if burn:
            chosen = _select_top(pool, run.N)
        else:
            chosen = _resample(pool, run.N, np.random.default_rng(member_ss[-1]))
        if not chosen:
            trace.warnings.append(f"iteration {it}: empty candidate pool, stopping early")
            break
        chosen_set = {}
        for i in chosen:
            chosen_set[i] = chosen_set.get(i, 0) + 1
        for i, e in enumerate(pool):
            trace.records.append({
                "iteration": it, "op": e.op, "parent": e.parent, "smiles": writer(e.graph),
                "log_density": e.log_density, "log_weight": e.log_weight,
                "accepted": i in chosen_set, "copies": chosen_set.get(i, 0),
            })
        theta = [pool[i].graph for i in chosen]
        theta_lp = [pool[i].log_density for i in chosen]
        for i in chosen:
            e = pool[i]
            phi.setdefault(e.key, (e.graph, e.log_density))
        ops = {}
        for i in chosen:
            ops[pool[i].op] = ops.get(pool[i].op, 0) + 1
        trace.iterations.append({
            "iteration": it, "phase": "burnin" if burn else "resample", "pool_size": len(pool),
            "selected": len(chosen), "selected_ops": ops,
            "min_log_density": min(theta_lp), "max_log_density": max(theta_lp),
        })
    return phi, trace


def best_output(phi: dict, target: TargetDistConfig) -> tuple[MolGraph, float]:
    """Highest-density molecule of ``phi`` that differs from the input; the
    input itself when nothing else was produced."""
    kx = canonical_key(target.x, cap=None)
    best = None
    for k in sorted(phi):
        g, lp = phi[k]
        if k == kx:
            continue
        if best is None or lp > best[1]:
            best = (g, lp)
    if best is None:
        return target.x, log_target_density(target, target.x)
    return best

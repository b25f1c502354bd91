"""Exact checks of the edit kernel on small, fully enumerable state spaces."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .chem import is_valid
from .molgraph import ALL_BONDS, MolGraph, SubstructureVocab, canonical_key
from .properties import NEG_INF, TargetDistConfig, log_target_density
from .proposal import OPS, ProposalConfig, add_completions
from .sampler import (
    ChainTables,
    KernelConfig,
    MoveCache,
    run_mh_chain,
    run_tabulated,
    tabulate,
    visit_frequencies,
)


class OracleError(RuntimeError):
    pass


@dataclass
class StateSpace:
    states: list[MolGraph]
    keys: list[str]
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {k: i for i, k in enumerate(self.keys)}

    def __len__(self) -> int:
        return len(self.states)


def enumerate_states(vocab: SubstructureVocab, max_nodes: int, bond_types=ALL_BONDS,
                     include_cycles: bool = False, limit: int = 100_000) -> StateSpace:
    """All connected valid graphs with at most ``max_nodes`` nodes.

    Trees are grown leaf by leaf; with ``include_cycles`` every extra edge
    between non-adjacent nodes is also tried.  States are ordered by node
    count, then by canonical key.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    cfg = ProposalConfig(bond_types=tuple(bond_types))
    found: dict[str, MolGraph] = {}

    def add(g):
        k = canonical_key(g, cap=None)
        if k in found:
            return False
        found[k] = g
        if len(found) > limit:
            raise OracleError(f"state space exceeds {limit} states")
        return True

    layer = []
    for e in vocab:
        g = MolGraph(vocab, [e.id])
        if add(g):
            layer.append(g)
    all_layers = [layer]
    for _ in range(1, max_nodes):
        nxt = []
        for g in layer:
            for u in range(g.n):
                for s in range(len(vocab)):
                    for h in _all_leaf_attachments(g, u, s, cfg):
                        if add(h):
                            nxt.append(h)
        all_layers.append(nxt)
        layer = nxt
    if include_cycles:
        frontier = [g for lay in all_layers for g in lay]
        while frontier:
            new = []
            for g in frontier:
                for h in _close_cycles(g, cfg):
                    if add(h):
                        new.append(h)
            frontier = new
    states = sorted(found.values(), key=lambda g: (g.n, canonical_key(g, cap=None)))
    return StateSpace(states, [canonical_key(g, cap=None) for g in states])


def _all_leaf_attachments(g: MolGraph, u: int, s: int, cfg: ProposalConfig) -> list[MolGraph]:
    vocab = g.vocab
    out = []
    if not vocab[s].is_ring and not g.entry(u).is_ring:
        for b in cfg.bond_types:
            h = g.add_leaf(u, s, b)
            if is_valid(h):
                out.append(h)
        return out
    # ring attachments already keep every legal option; no target needed
    return add_completions(g, u, s, None, cfg)


def _close_cycles(g: MolGraph, cfg: ProposalConfig) -> list[MolGraph]:
    from .chem import free_positions

    out = []
    for u in range(g.n):
        for v in range(u + 1, g.n):
            if g.edge_between(u, v) is not None:
                continue
            pus = free_positions(g, u) if g.entry(u).is_ring else [-1]
            pvs = free_positions(g, v) if g.entry(v).is_ring else [-1]
            for pu in pus:
                for pv in pvs:
                    for b in cfg.bond_types:
                        h = g.with_edge(u, v, b, pu, pv)
                        if is_valid(h):
                            out.append(h)
    return out


# ---------------------------------------------------------------------------
# matrices


def build_transition_matrix(space: StateSpace, kernel: KernelConfig, target: TargetDistConfig,
                            models, cfg: ProposalConfig | None = None,
                            cache: MoveCache | None = None, row_tol: float = 1e-12):
    """Exact transition matrix over ``space``; returns ``(T, tables)``."""
    cfg = cfg or ProposalConfig()
    cache = cache or MoveCache(models, target, cfg)
    tables = tabulate(space.states[0], kernel, cache, states=space.states)
    if tables.keys != space.keys:
        raise OracleError("state keys changed while tabulating")
    n = len(space)
    T = np.zeros((n, n))
    for i in range(n):
        for j, op in enumerate(OPS):
            lo, hi = tables.offsets[3 * i + j], tables.offsets[3 * i + j + 1]
            probs = tables.probs[lo:hi]
            total = probs.sum() + tables.fail[i, j]
            if abs(total - 1.0) > row_tol:
                raise OracleError(f"state {space.keys[i]} op {op}: path mass {total!r} != 1")
            g = kernel.gamma[j]
            moved = probs * tables.accept[lo:hi]
            np.add.at(T[i], tables.targets[lo:hi], g * moved)
            T[i, i] += g * (tables.fail[i, j] + (probs - moved).sum())
    rows = T.sum(axis=1)
    if np.abs(rows - 1.0).max() > row_tol or (T < 0).any():
        raise OracleError(f"transition matrix rows deviate from 1 by {np.abs(rows - 1).max():.3g}")
    return T, tables


def stationary_distribution(T: np.ndarray, p0: np.ndarray | None = None, tol: float = 1e-12,
                            max_iter: int = 1_000_000) -> np.ndarray:
    """Left fixed point of ``T`` by power iteration."""
    n = T.shape[0]
    p0 = np.full(n, 1.0 / n) if p0 is None else np.asarray(p0, dtype=np.float64)
    p, iters, ok = _kernels.power_iteration(np.ascontiguousarray(T, dtype=np.float64), p0, tol, max_iter)
    if not ok:
        raise OracleError(f"power iteration did not converge in {max_iter} iterations")
    return p


def exact_distribution(space: StateSpace, target: TargetDistConfig) -> np.ndarray:
    lp = np.array([log_target_density(target, g) for g in space.states])
    if np.isneginf(lp).all():
        raise OracleError("target has no support on the state space")
    w = np.exp(lp - lp.max())
    return w / w.sum()


def detailed_balance_check(T: np.ndarray, p: np.ndarray) -> float:
    flow = p[:, None] * T
    return float(np.abs(flow - flow.T).max())


def total_variation(freq: np.ndarray, p: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(freq) - np.asarray(p)).sum())


def empirical_vs_exact(visits: np.ndarray, space_size: int, p: np.ndarray) -> tuple[float, int]:
    return total_variation(visit_frequencies(visits, space_size), p), len(visits)


def reachable_within(T: np.ndarray, max_steps: int) -> bool:
    """True when every state reaches every other in at most ``max_steps`` steps."""
    n = T.shape[0]
    A = (T > 0).astype(np.int64)
    R = np.eye(n, dtype=bool)
    for _ in range(max_steps):
        R = R | ((R.astype(np.int64) @ A) > 0)
        if R.all():
            return True
    return bool(R.all())


# ---------------------------------------------------------------------------
# full report


@dataclass
class VerifyReport:
    space_size: int
    convention: str
    gamma: tuple[float, float, float]
    stationarity_linf: float
    balance_violation: float
    tv: float | None
    tv_steps: int
    tv_route: str
    invalid_proposals: int
    irreducible: bool
    seconds: dict[str, float]
    tolerances: dict[str, float]
    passed: dict[str, bool]

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def as_dict(self) -> dict:
        return {
            "space_size": self.space_size, "convention": self.convention,
            "gamma": list(self.gamma), "stationarity_linf": self.stationarity_linf,
            "balance_violation": self.balance_violation, "tv": self.tv, "tv_steps": self.tv_steps,
            "tv_route": self.tv_route, "invalid_proposals": self.invalid_proposals,
            "irreducible": self.irreducible, "seconds": self.seconds,
            "tolerances": self.tolerances, "passed": self.passed, "ok": self.ok,
        }


def verify(space: StateSpace, kernel: KernelConfig, target: TargetDistConfig, models,
           cfg: ProposalConfig | None = None, tv_steps: int = 1_000_000, seed: int = 0,
           stat_tol: float = 1e-9, balance_tol: float = 1e-9, tv_tol: float = 0.05,
           max_nodes: int | None = None, tv_route: str = "sampled") -> VerifyReport:
    """Stationarity, balance and reachability from the exact matrix, then a
    long-run TV check.  ``tv_route="sampled"`` runs real :func:`mh_step`
    transitions; ``"tabulated"`` walks the compiled exact tables instead."""
    if tv_route not in ("sampled", "tabulated"):
        raise ValueError(f"tv_route must be 'sampled' or 'tabulated', got {tv_route!r}")
    cfg = cfg or ProposalConfig()
    secs = {}
    t0 = time.perf_counter()
    cache = MoveCache(models, target, cfg)
    T, tables = build_transition_matrix(space, kernel, target, models, cfg, cache)
    p_exact = exact_distribution(space, target)
    p_stat = stationary_distribution(T)
    secs["stationarity"] = time.perf_counter() - t0
    linf = float(np.abs(p_stat - p_exact).max())
    bal = detailed_balance_check(T, p_exact)
    mn = max_nodes or max(g.n for g in space.states)
    irr = reachable_within(T, 2 * mn) if len(space) > 1 else True
    tv, invalid = None, 0
    if tv_steps > 0:
        t1 = time.perf_counter()
        rng = np.random.default_rng(seed)
        if tv_route == "sampled":
            chain = run_mh_chain(target, kernel, models, tv_steps, rng, cfg=cfg, cache=cache)
            invalid = chain.invalid_proposals
            try:
                visits = np.array([space.index[k] for k in chain.keys], dtype=np.int64)
            except KeyError as exc:
                raise OracleError(f"chain left the enumerated space at {exc.args[0]}") from None
        else:
            start = space.index[cache.key(target.x)] if cache.key(target.x) in space.index else 0
            visits, _ = run_tabulated(tables, tv_steps, rng, start)
        tv = total_variation(visit_frequencies(visits, len(space)), p_exact)
        secs["tv"] = time.perf_counter() - t1
    passed = {"stationarity": linf <= stat_tol, "detailed_balance": bal <= balance_tol,
              "irreducible": irr}
    if tv is not None:
        passed["tv"] = tv <= tv_tol
        passed["valid_proposals"] = invalid == 0
    return VerifyReport(len(space), kernel.weight_convention, kernel.gamma, linf, bal, tv,
                        tv_steps, tv_route, invalid, irr, secs,
                        {"stationarity": stat_tol, "detailed_balance": balance_tol, "tv": tv_tol},
                        passed)

"""Substructure-level molecular graphs.

A :class:`MolGraph` node is either an atom or a whole (non-fused) ring taken
from a :class:`SubstructureVocab`; edges are typed bonds.  Edges that touch a
ring node record which ring atom (``pos``) carries the bond, so substitution
patterns (ortho/meta/para) survive editing.  Graphs are immutable; every edit
returns a new graph.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .elements import (
    AROMATIC_SYMBOLS,
    DEFAULT_VALENCES,
    ELEMENTS,
    MAX_VALENCE,
    ORGANIC_SUBSET,
)

DEFAULT_KEY_CAP = 12


class GraphError(ValueError):
    """Structurally malformed graph (self loop, parallel edge, bad index)."""


class CanonicalKeyError(ValueError):
    pass


class VocabError(ValueError):
    pass


class BondType(enum.IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def order(self) -> float:
        return _BOND_ORDER[self]

    @property
    def symbol(self) -> str:
        return "-=#:"[self]


_BOND_ORDER = (1.0, 2.0, 3.0, 1.5)
ALL_BONDS = tuple(BondType)
C2 = len(ALL_BONDS)


# ---------------------------------------------------------------------------
# atom-level view


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    hcount: int | None = None  # None: implicit (organic subset only)
    bracket: bool = False
    offset: int = -1  # byte offset in the source SMILES, -1 if synthetic


@dataclass
class AtomGraph:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[tuple[int, int, BondType]] = field(default_factory=list)

    def neighbors(self) -> list[list[tuple[int, BondType]]]:
        adj: list[list[tuple[int, BondType]]] = [[] for _ in self.atoms]
        for i, j, b in self.bonds:
            adj[i].append((j, b))
            adj[j].append((i, b))
        return adj


def implicit_hcount(atom: Atom, bonds: Iterable[BondType]) -> int:
    """Hydrogens implied by the SMILES valence rules for ``atom``."""
    if atom.hcount is not None:
        return atom.hcount
    valences = DEFAULT_VALENCES.get(atom.element)
    if valences is None or atom.bracket:
        return 0
    bonds = list(bonds)
    if atom.aromatic:
        used = sum(1 if b == BondType.AROMATIC else int(b.order) for b in bonds) + 1
        return max(valences[0] - used, 0)
    used = math.ceil(sum(b.order for b in bonds) - 1e-9)
    for v in valences:
        if v >= used:
            return v - used
    return 0


# ---------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class RingTemplate:
    """Atom-level layout of a ring substructure.

    Positions run around the cycle; ``bonds[i]`` joins positions ``i`` and
    ``i + 1``.  ``free[i]`` is the number of hydrogens at that position in the
    isolated ring, i.e. how much external bond order it can take.
    ``symmetries`` lists the position permutations that preserve the ring.
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[BondType, ...]
    free: tuple[int, ...]
    symmetries: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.atoms)

    def signature(self, i: int) -> tuple:
        a = self.atoms[i]
        return (a.element, a.aromatic, a.charge, self.free[i])

    @classmethod
    def from_atom_graph(cls, ag: AtomGraph) -> "RingTemplate":
        n = len(ag.atoms)
        adj = ag.neighbors()
        if n < 3 or len(ag.bonds) != n or any(len(a) != 2 for a in adj):
            raise VocabError("ring label must describe exactly one simple cycle")
        order = [0]
        prev, cur = -1, 0
        while True:
            nxt = min(j for j, _ in adj[cur] if j != prev)
            if nxt == 0:
                break
            order.append(nxt)
            prev, cur = cur, nxt
            if len(order) > n:
                break
        if len(order) != n:
            raise VocabError("ring label is not a single connected cycle")
        bond_of = {}
        for i, j, b in ag.bonds:
            bond_of[(i, j)] = bond_of[(j, i)] = b
        atoms = tuple(ag.atoms[k] for k in order)
        bonds = tuple(bond_of[(order[i], order[(i + 1) % n])] for i in range(n))
        free = tuple(
            implicit_hcount(ag.atoms[k], [b for _, b in adj[k]]) for k in order
        )
        sig = [(a.element, a.aromatic, a.charge, free[i]) for i, a in enumerate(atoms)]
        syms = []
        for r in range(n):
            for d in (1, -1):
                perm = tuple((r + d * i) % n for i in range(n))
                if any(sig[perm[i]] != sig[i] for i in range(n)):
                    continue
                if d == 1:
                    ok = all(bonds[(r + i) % n] == bonds[i] for i in range(n))
                else:
                    ok = all(bonds[(r - i - 1) % n] == bonds[i] for i in range(n))
                if ok and perm not in syms:
                    syms.append(perm)
        return cls(atoms, bonds, free, tuple(syms))


@dataclass(frozen=True)
class VocabEntry:
    id: int
    kind: str  # "atom" | "ring"
    label: str
    max_valence: int = 0
    ring_size: int = 0
    attachment_capacity: int = 0
    template: RingTemplate | None = field(default=None, compare=False, repr=False)

    @property
    def is_ring(self) -> bool:
        return self.kind == "ring"


def _ring_template(label: str) -> RingTemplate:
    from .smiles import read_atom_graph

    return RingTemplate.from_atom_graph(read_atom_graph(label))


class SubstructureVocab:
    """Ordered catalog of substructures; ids are dense ``0..C1-1``."""

    def __init__(self, entries: Sequence[VocabEntry]):
        self.entries = tuple(entries)
        self._by_label = {}
        for i, e in enumerate(self.entries):
            if e.id != i:
                raise VocabError(f"entry ids must be dense, got {e.id} at {i}")
            if e.label in self._by_label:
                raise VocabError(f"duplicate label {e.label!r}")
            if e.kind == "atom":
                if not 1 <= e.max_valence <= 8:
                    raise VocabError(f"{e.label}: max_valence must be in 1..8")
            elif e.kind == "ring":
                if e.ring_size < 3 or not 1 <= e.attachment_capacity <= e.ring_size:
                    raise VocabError(f"{e.label}: bad ring size/capacity")
                if e.template is None or e.template.size != e.ring_size:
                    raise VocabError(f"{e.label}: ring size does not match label")
            else:
                raise VocabError(f"unknown kind {e.kind!r}")
            self._by_label[e.label] = i

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> VocabEntry:
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, SubstructureVocab) and self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(e.label for e in self.entries)

    def index(self, label: str) -> int:
        try:
            return self._by_label[label]
        except KeyError:
            raise VocabError(f"{label!r} not in vocabulary") from None

    def get(self, label: str) -> int | None:
        return self._by_label.get(label)

    @property
    def ring_ids(self) -> list[int]:
        return [e.id for e in self.entries if e.is_ring]

    # -- construction -----------------------------------------------------

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "SubstructureVocab":
        """Build a vocabulary from element symbols and ring SMILES."""
        entries = []
        for i, label in enumerate(labels):
            if label in MAX_VALENCE:
                entries.append(VocabEntry(i, "atom", label, max_valence=MAX_VALENCE[label]))
            else:
                t = _ring_template(label)
                cap = sum(1 for f in t.free if f > 0)
                entries.append(
                    VocabEntry(i, "ring", label, ring_size=t.size,
                               attachment_capacity=max(cap, 1), template=t)
                )
        return cls(entries)

    @classmethod
    def from_file(cls, path) -> "SubstructureVocab":
        text = Path(path).read_text() if not hasattr(path, "read_text") else path.read_text()
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text: str) -> "SubstructureVocab":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise VocabError(f"line {lineno}: expected 4 tab-separated fields")
            idx, kind, label, extra = parts
            if kind == "atom":
                entries.append(VocabEntry(int(idx), "atom", label, max_valence=int(extra)))
            elif kind == "ring":
                size, cap = (int(x) for x in extra.split(":"))
                entries.append(
                    VocabEntry(int(idx), "ring", label, ring_size=size,
                               attachment_capacity=cap, template=_ring_template(label))
                )
            else:
                raise VocabError(f"line {lineno}: unknown kind {kind!r}")
        return cls(entries)

    def to_text(self) -> str:
        lines = ["# id\tkind\tlabel\tmax_valence | ring_size:attachment_capacity"]
        for e in self.entries:
            extra = str(e.max_valence) if e.kind == "atom" else f"{e.ring_size}:{e.attachment_capacity}"
            lines.append(f"{e.id}\t{e.kind}\t{e.label}\t{extra}")
        return "\n".join(lines) + "\n"

    @classmethod
    def builtin(cls, name: str = "desk") -> "SubstructureVocab":
        """Shipped vocabularies: ``desk`` (10 entries) or ``full`` (149)."""
        fname = {"desk": "vocab_desk.tsv", "full": "vocab_full.tsv"}[name]
        return cls.from_text(resources.files("molsampler.data").joinpath(fname).read_text())


def atom_vocab(symbols: Iterable[str]) -> SubstructureVocab:
    return SubstructureVocab.from_labels(symbols)


# ---------------------------------------------------------------------------
# substructure graph


class Edge(NamedTuple):
    u: int
    v: int
    bond: BondType
    pos_u: int = -1
    pos_v: int = -1

    def other(self, x: int) -> int:
        return self.v if x == self.u else self.u

    def pos_at(self, x: int) -> int:
        return self.pos_u if x == self.u else self.pos_v


def _norm_edge(u, v, bond, pu=-1, pv=-1) -> Edge:
    bond = BondType(bond)
    if u > v:
        u, v, pu, pv = v, u, pv, pu
    return Edge(u, v, bond, pu, pv)


class MolGraph:
    """Immutable substructure graph.  ``nodes[i]`` is a vocabulary id."""

    __slots__ = ("vocab", "nodes", "edges", "_adj", "_key", "_hash")

    def __init__(self, vocab: SubstructureVocab, nodes: Sequence[int],
                 edges: Iterable = ()):
        self.vocab = vocab
        self.nodes = tuple(int(s) for s in nodes)
        self.edges = tuple(sorted(_norm_edge(*e) for e in edges))
        self._adj = None
        self._key = None
        self._hash = None
        n = len(self.nodes)
        seen = set()
        for s in self.nodes:
            if not 0 <= s < len(vocab):
                raise GraphError(f"vocab id {s} out of range")
        for e in self.edges:
            if not (0 <= e.u < n and 0 <= e.v < n):
                raise GraphError(f"edge {e} references a missing node")
            if e.u == e.v:
                raise GraphError(f"self loop at node {e.u}")
            if (e.u, e.v) in seen:
                raise GraphError(f"parallel edge {e.u}-{e.v}")
            seen.add((e.u, e.v))
            for x, p in ((e.u, e.pos_u), (e.v, e.pos_v)):
                ent = vocab[self.nodes[x]]
                if ent.is_ring:
                    if not 0 <= p < ent.ring_size:
                        raise GraphError(f"edge {e} needs a ring position at node {x}")
                elif p != -1:
                    raise GraphError(f"edge {e} carries a ring position at atom node {x}")

    # -- basic structure --------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def __eq__(self, other):
        return (isinstance(other, MolGraph) and self.nodes == other.nodes
                and self.edges == other.edges and self.vocab == other.vocab)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nodes, self.edges))
        return self._hash

    @property
    def struct(self) -> tuple:
        """Exact (index-dependent) structure, usable as a cache key."""
        return (self.nodes, self.edges)

    def __repr__(self):
        labels = [self.vocab[s].label for s in self.nodes]
        es = ", ".join(
            f"{e.u}{e.bond.symbol}{e.v}" + (f"@{e.pos_u},{e.pos_v}" if e.pos_u >= 0 or e.pos_v >= 0 else "")
            for e in self.edges
        )
        return f"MolGraph({labels}, [{es}])"

    def entry(self, i: int) -> VocabEntry:
        return self.vocab[self.nodes[i]]

    @property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per node: ``(neighbor, edge index)`` pairs."""
        if self._adj is None:
            adj = [[] for _ in self.nodes]
            for k, e in enumerate(self.edges):
                adj[e.u].append((e.v, k))
                adj[e.v].append((e.u, k))
            self._adj = tuple(tuple(a) for a in adj)
        return self._adj

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def neighbors(self, i: int) -> list[int]:
        return [j for j, _ in self.adjacency[i]]

    def incident(self, i: int) -> list[Edge]:
        return [self.edges[k] for _, k in self.adjacency[i]]

    def edge_between(self, u: int, v: int) -> Edge | None:
        for j, k in self.adjacency[u]:
            if j == v:
                return self.edges[k]
        return None

    def is_connected(self) -> bool:
        n = len(self.nodes)
        if n == 0:
            return False
        seen = {0}
        stack = [0]
        adj = self.adjacency
        while stack:
            x = stack.pop()
            for y, _ in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return len(seen) == n

    def position_load(self, i: int) -> dict[int, float]:
        """External bond order per ring position of ring node ``i``."""
        load: dict[int, float] = {}
        for e in self.incident(i):
            p = e.pos_at(i)
            load[p] = load.get(p, 0.0) + e.bond.order
        return load

    # -- edits (all return new graphs) ------------------------------------

    def with_nodes_edges(self, nodes, edges) -> "MolGraph":
        return MolGraph(self.vocab, nodes, edges)

    def with_edge(self, u: int, v: int, bond: BondType, pos_u: int = -1,
                  pos_v: int = -1) -> "MolGraph":
        """Set (add or overwrite) the edge ``u-v``."""
        keep = [e for e in self.edges if {e.u, e.v} != {u, v}]
        keep.append(_norm_edge(u, v, bond, pos_u, pos_v))
        return MolGraph(self.vocab, self.nodes, keep)

    def with_label(self, v: int, label: int, edges: Iterable | None = None) -> "MolGraph":
        nodes = list(self.nodes)
        nodes[v] = label
        return MolGraph(self.vocab, nodes, self.edges if edges is None else edges)

    def add_leaf(self, anchor: int, label: int, bond: BondType, pos_anchor: int = -1,
                 pos_new: int = -1) -> "MolGraph":
        v = len(self.nodes)
        return MolGraph(self.vocab, self.nodes + (label,),
                        self.edges + (_norm_edge(anchor, v, bond, pos_anchor, pos_new),))

    def remove_node(self, v: int) -> "MolGraph":
        remap = {i: (i if i < v else i - 1) for i in range(len(self.nodes)) if i != v}
        nodes = [s for i, s in enumerate(self.nodes) if i != v]
        edges = [
            (remap[e.u], remap[e.v], e.bond, e.pos_u, e.pos_v)
            for e in self.edges if v not in (e.u, e.v)
        ]
        return MolGraph(self.vocab, nodes, edges)


def leaf_nodes(g: MolGraph) -> set[int]:
    return {i for i in range(g.n) if g.degree(i) == 1}


# ---------------------------------------------------------------------------
# expansion to atoms


def expand(g: MolGraph) -> tuple[AtomGraph, list[int], list[list[int]]]:
    """Atom-level view of ``g``.

    Returns the atom graph, the owning node of every atom, and per node the
    atom indices (ring atoms in template position order).
    """
    ag = AtomGraph()
    owner: list[int] = []
    node_atoms: list[list[int]] = []
    for i, s in enumerate(g.nodes):
        ent = g.vocab[s]
        if ent.is_ring:
            t = ent.template
            load = g.position_load(i)
            base = len(ag.atoms)
            idx = []
            for p, ta in enumerate(t.atoms):
                h = None
                if ta.hcount is not None:
                    h = max(t.free[p] - int(math.ceil(load.get(p, 0.0))), 0)
                ag.atoms.append(Atom(ta.element, ta.aromatic, ta.charge, h, ta.bracket))
                owner.append(i)
                idx.append(base + p)
            for p, b in enumerate(t.bonds):
                ag.bonds.append((base + p, base + (p + 1) % t.size, b))
            node_atoms.append(idx)
        else:
            ag.atoms.append(Atom(ent.label, False, 0, None, ent.label not in ORGANIC_SUBSET))
            owner.append(i)
            node_atoms.append([len(ag.atoms) - 1])
    for e in g.edges:
        a = node_atoms[e.u][e.pos_u if e.pos_u >= 0 else 0]
        b = node_atoms[e.v][e.pos_v if e.pos_v >= 0 else 0]
        ag.bonds.append((a, b, e.bond))
    return ag, owner, node_atoms


def graph_isomorphic(a: MolGraph, b: MolGraph) -> bool:
    """Label-, bond- and ring-position-preserving isomorphism test.

    Compares the atom-level expansions, where ring symmetry is explicit.
    """
    import networkx as nx

    if a.n != b.n or len(a.edges) != len(b.edges):
        return False
    if sorted(a.vocab[s].label for s in a.nodes) != sorted(b.vocab[s].label for s in b.nodes):
        return False

    def to_nx(g):
        ag, owner, _ = expand(g)
        G = nx.Graph()
        for k, at in enumerate(ag.atoms):
            G.add_node(k, lab=(g.vocab[g.nodes[owner[k]]].label, at.element, at.aromatic))
        for i, j, bt in ag.bonds:
            G.add_edge(i, j, lab=(int(bt), owner[i] == owner[j]))
        return G

    return nx.is_isomorphic(
        to_nx(a), to_nx(b),
        node_match=lambda x, y: x["lab"] == y["lab"],
        edge_match=lambda x, y: x["lab"] == y["lab"],
    )


# ---------------------------------------------------------------------------
# canonical form (individualization / refinement)


def _rank(sigs: list) -> list[int]:
    uniq = {s: r for r, s in enumerate(sorted(set(sigs)))}
    return [uniq[s] for s in sigs]


def canonical_key(g: MolGraph, cap: int | None = DEFAULT_KEY_CAP) -> str:
    """Text key equal for two graphs iff they are isomorphic.

    Exact search over orderings that survive colour refinement; ``cap``
    bounds the node count (``None`` disables the guard).
    """
    if g._key is not None:
        return g._key
    n = g.n
    if cap is not None and n > cap:
        raise CanonicalKeyError(f"graph has {n} nodes, canonical key cap is {cap}")
    vocab = g.vocab
    labels = [vocab[s].label for s in g.nodes]
    adj = g.adjacency
    nbrs = [[(j, int(g.edges[k].bond)) for j, k in adj[i]] for i in range(n)]
    ring_syms = [vocab[s].template.symmetries if vocab[s].is_ring else None for s in g.nodes]

    # twins: same label, same incident (neighbor, bond, neighbor-side pos);
    # swapping them is an automorphism.  Ring nodes additionally need a ring
    # symmetry mapping their own attachment positions onto each other.
    twin_sig = []
    att: list = [None] * n  # ring node -> [(own position, neighbour, bond)]
    orbit: list = [None] * n
    size = [0] * n
    for i in range(n):
        inc = sorted((e.other(i), int(e.bond), e.pos_at(e.other(i)), e.pos_at(i))
                     for e in g.incident(i))
        key = tuple(x[:3] for x in inc)
        if ring_syms[i] is not None:
            att[i] = [(pi, j, b) for j, b, _, pi in inc]
            size[i] = vocab[g.nodes[i]].template.size
            orbit[i] = {pi: min(sym[pi] for sym in ring_syms[i]) for pi, _, _ in att[i]}
            own = min(tuple(sym[x[3]] for x in inc) for sym in ring_syms[i])
            twin_sig.append((labels[i], key, own))
        else:
            twin_sig.append((labels[i], key))
    ring_nodes = [i for i in range(n) if att[i]]

    def refine(colors):
        # an attachment's context on a ring: its position class and the
        # cyclic distances to the ring's other attachments
        ncol = len(set(colors))
        while True:
            ctx = {}
            for i in ring_nodes:
                k = size[i]
                for p, j, _ in att[i]:
                    ctx[(i, j)] = (orbit[i][p], tuple(sorted(
                        (min(abs(p - q), k - abs(p - q)), bb, colors[l])
                        for q, l, bb in att[i] if l != j)))
            sigs = [(colors[i], tuple(sorted((b, colors[j], ctx.get((j, i), ()), ctx.get((i, j), ()))
                                             for j, b in nbrs[i])))
                    for i in range(n)]
            new = _rank(sigs)
            k = len(set(new))
            if k == ncol:
                return new
            colors, ncol = new, k

    def certificate(colors):
        rank = colors  # all distinct after full refinement
        sigma = {}
        for i in range(n):
            syms = ring_syms[i]
            if syms is None:
                continue
            inc = sorted((rank[e.other(i)], e.pos_at(i)) for e in g.incident(i))
            best = None
            for s in syms:
                t = tuple(s[p] for _, p in inc)
                if best is None or t < best[0]:
                    best = (t, s)
            sigma[i] = best[1] if best else syms[0]
        es = []
        for e in g.edges:
            pu = sigma[e.u][e.pos_u] if e.pos_u >= 0 else -1
            pv = sigma[e.v][e.pos_v] if e.pos_v >= 0 else -1
            ru, rv = rank[e.u], rank[e.v]
            if ru > rv:
                ru, rv, pu, pv = rv, ru, pv, pu
            es.append((ru, rv, int(e.bond), pu, pv))
        order = sorted(range(n), key=rank.__getitem__)
        return (tuple(labels[i] for i in order), tuple(sorted(es)))

    first: list = [None]  # (certificate, leaf colouring) of the first leaf
    best: list = [None]
    autos: list[list[int]] = []

    def orbit_of(vs, path):
        gens = [a for a in autos if all(a[p] == p for p in path)]
        seen, stack = set(vs), list(vs)
        while stack:
            x = stack.pop()
            for a in gens:
                y = a[x]
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return seen

    def search(colors, path):
        colors = refine(colors)
        cells: dict[int, list[int]] = {}
        for i, c in enumerate(colors):
            cells.setdefault(c, []).append(i)
        target = None
        for c in sorted(cells):
            cell = cells[c]
            if len(cell) > 1 and (target is None or len(cell) < len(target)):
                target = cell
        if target is None:
            cert = certificate(colors)
            for ref in (first[0], best[0]):
                if ref is not None and ref[0] == cert:
                    # equal certificates: the relabelling is an automorphism
                    inv = [0] * n
                    for i, r in enumerate(ref[1]):
                        inv[r] = i
                    autos.append([inv[colors[i]] for i in range(n)])
                    break
            if first[0] is None:
                first[0] = (cert, colors)
            if best[0] is None or cert < best[0][0]:
                best[0] = (cert, colors)
            return
        tried: list[int] = []
        tried_sig = set()
        for v in target:
            if twin_sig[v] in tried_sig:
                continue
            if tried and autos and v in orbit_of(tried, path):
                continue
            tried.append(v)
            tried_sig.add(twin_sig[v])
            cv = colors[v]
            search(_rank([(2 * c + (0 if i == v else 1)) if c == cv else 2 * c
                          for i, c in enumerate(colors)]), path + [v])

    if n == 0:
        key = "empty"
    else:
        init = _rank([(labels[i], len(nbrs[i])) for i in range(n)])
        search(init, [])
        lab, es = best[0][0]
        parts = []
        for ru, rv, b, pu, pv in es:
            s = f"{ru}{'-=#:'[b]}{rv}"
            if pu >= 0 or pv >= 0:
                s += f"@{pu},{pv}"
            parts.append(s)
        key = ".".join(lab) + "|" + ";".join(parts)
    g._key = key
    return key

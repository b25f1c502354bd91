"""A small SMILES dialect: reading, ring perception, collapse, writing.

Supported: organic-subset atoms (B C N O P S F Cl Br I and their aromatic
lowercase forms), bracket atoms with hydrogen count and charge, bonds
``- = # :``, ring-closure digits 0-9 and parenthesised branches.  Stereo
markers, isotopes, atom classes, ``%nn`` closures and dot-disconnected
fragments are rejected with a positioned error.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .elements import AROMATIC_SYMBOLS, ELEMENTS, ORGANIC_SUBSET
from .molgraph import (
    Atom,
    AtomGraph,
    BondType,
    GraphError,
    MolGraph,
    SubstructureVocab,
    expand,
    implicit_hcount,
)

_ELEMENT_SET = frozenset(ELEMENTS)
_BOND_CHARS = {"-": BondType.SINGLE, "=": BondType.DOUBLE, "#": BondType.TRIPLE,
               ":": BondType.AROMATIC}


class SmilesError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class SmilesLexError(SmilesError):
    pass


class UnsupportedSmilesError(SmilesLexError):
    """Stereo, isotopes and other features outside the dialect."""


class SmilesSyntaxError(SmilesError):
    """Unbalanced ring closures or branches, dangling bonds."""


class UnknownAtomError(SmilesError):
    pass


class ValenceError(SmilesError):
    pass


class SmilesWriteError(ValueError):
    pass


@dataclass(frozen=True)
class SmilesToken:
    kind: str  # atom | bracket_atom | bond | ring_closure | branch_open | branch_close
    payload: str
    offset: int


# ---------------------------------------------------------------------------
# lexing


def tokenize(s: str) -> list[SmilesToken]:
    toks = []
    i, n = 0, len(s)
    while i < n:
        c = s[i]
        if c in "BCNOPSFI":
            if s.startswith("Cl", i) or s.startswith("Br", i):
                toks.append(SmilesToken("atom", s[i:i + 2], i))
                i += 2
            else:
                toks.append(SmilesToken("atom", c, i))
                i += 1
        elif c in "bcnops":
            toks.append(SmilesToken("atom", c, i))
            i += 1
        elif c == "[":
            j = s.find("]", i + 1)
            if j < 0:
                raise SmilesLexError("unterminated bracket atom", i)
            toks.append(SmilesToken("bracket_atom", s[i + 1:j], i))
            i = j + 1
        elif c in _BOND_CHARS:
            toks.append(SmilesToken("bond", c, i))
            i += 1
        elif c.isdigit() and c.isascii():
            toks.append(SmilesToken("ring_closure", c, i))
            i += 1
        elif c == "(":
            toks.append(SmilesToken("branch_open", c, i))
            i += 1
        elif c == ")":
            toks.append(SmilesToken("branch_close", c, i))
            i += 1
        elif c in "/\\@":
            raise UnsupportedSmilesError("stereochemistry is not supported", i)
        elif c == "%":
            raise UnsupportedSmilesError("two-digit ring closures are not supported", i)
        elif c == ".":
            raise UnsupportedSmilesError("disconnected fragments are not supported", i)
        else:
            raise SmilesLexError(f"unexpected character {c!r}", i)
    return toks


def _bracket_atom(body: str, offset: int) -> Atom:
    pos = offset + 1
    i = 0
    if i < len(body) and body[i].isdigit():
        raise UnsupportedSmilesError("isotopes are not supported", pos)
    sym = None
    aromatic = False
    for cand in (body[i:i + 2], body[i:i + 1]):
        if len(cand) == 0:
            continue
        if cand in AROMATIC_SYMBOLS:
            sym, aromatic = AROMATIC_SYMBOLS[cand], True
            break
        if cand in _ELEMENT_SET:
            sym = cand
            break
    if sym is None:
        raise SmilesLexError(f"unknown element in [{body}]", pos)
    i += len(sym)
    if i < len(body) and body[i] == "@":
        raise UnsupportedSmilesError("stereochemistry is not supported", pos + i)
    h = 0
    if i < len(body) and body[i] == "H":
        i += 1
        h = 1
        if i < len(body) and body[i].isdigit():
            h = int(body[i])
            i += 1
    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        ch = body[i]
        i += 1
        if i < len(body) and body[i].isdigit():
            charge = sign * int(body[i])
            i += 1
        else:
            charge = sign
            while i < len(body) and body[i] == ch:
                charge += sign
                i += 1
    if i < len(body):
        if body[i] == ":":
            raise UnsupportedSmilesError("atom classes are not supported", pos + i)
        raise SmilesLexError(f"unexpected {body[i]!r} in bracket atom", pos + i)
    return Atom(sym, aromatic, charge, h, True, offset)


def read_atom_graph(s: str) -> AtomGraph:
    """Parse SMILES text into an atom graph (no vocabulary involved)."""
    toks = tokenize(s)
    if not toks:
        raise SmilesSyntaxError("empty SMILES", 0)
    ag = AtomGraph()
    bonded: set[tuple[int, int]] = set()
    prev = -1
    pending: SmilesToken | None = None
    branches: list[tuple[int, int]] = []
    rings: dict[str, tuple[int, BondType | None, int]] = {}

    def default_bond(a, b):
        if ag.atoms[a].aromatic and ag.atoms[b].aromatic:
            return BondType.AROMATIC
        return BondType.SINGLE

    implicit_aromatic: list[int] = []

    def connect(a, b, bond, offset):
        key = (min(a, b), max(a, b))
        if a == b or key in bonded:
            raise SmilesSyntaxError("ring closure duplicates an existing bond", offset)
        bonded.add(key)
        if bond is None:
            bond = default_bond(a, b)
            if bond == BondType.AROMATIC:
                implicit_aromatic.append(len(ag.bonds))
        ag.bonds.append((a, b, bond))

    for tok in toks:
        if tok.kind in ("atom", "bracket_atom"):
            if tok.kind == "atom":
                sym = tok.payload
                if sym in AROMATIC_SYMBOLS:
                    atom = Atom(AROMATIC_SYMBOLS[sym], True, 0, None, False, tok.offset)
                else:
                    atom = Atom(sym, False, 0, None, False, tok.offset)
            else:
                atom = _bracket_atom(tok.payload, tok.offset)
            ag.atoms.append(atom)
            cur = len(ag.atoms) - 1
            if prev >= 0:
                connect(prev, cur, _BOND_CHARS[pending.payload] if pending else None,
                        tok.offset)
            elif pending is not None:
                raise SmilesSyntaxError("bond before the first atom", pending.offset)
            pending = None
            prev = cur
        elif tok.kind == "bond":
            if pending is not None:
                raise SmilesSyntaxError("two consecutive bonds", tok.offset)
            if prev < 0:
                raise SmilesSyntaxError("bond before the first atom", tok.offset)
            pending = tok
        elif tok.kind == "ring_closure":
            if prev < 0:
                raise SmilesSyntaxError("ring closure before the first atom", tok.offset)
            bond = _BOND_CHARS[pending.payload] if pending else None
            pending = None
            d = tok.payload
            if d in rings:
                other, obond, ooff = rings.pop(d)
                if bond is not None and obond is not None and bond != obond:
                    raise SmilesSyntaxError("conflicting ring-closure bond types", tok.offset)
                connect(other, prev, bond if bond is not None else obond, tok.offset)
            else:
                rings[d] = (prev, bond, tok.offset)
        elif tok.kind == "branch_open":
            if prev < 0:
                raise SmilesSyntaxError("branch before the first atom", tok.offset)
            if pending is not None:
                raise SmilesSyntaxError("bond before a branch", pending.offset)
            branches.append((prev, tok.offset))
        else:
            if not branches:
                raise SmilesSyntaxError("unbalanced ')'", tok.offset)
            if pending is not None:
                raise SmilesSyntaxError("dangling bond at branch end", pending.offset)
            prev, _ = branches.pop()
    if pending is not None:
        raise SmilesSyntaxError("dangling bond at end of input", pending.offset)
    if branches:
        raise SmilesSyntaxError("unclosed branch", branches[-1][1])
    if rings:
        raise SmilesSyntaxError("unclosed ring", min(o for _, _, o in rings.values()))
    if implicit_aromatic:
        _demote_aromatic_bridges(ag, implicit_aromatic)
    return ag


def _demote_aromatic_bridges(ag: AtomGraph, candidates: list[int]):
    """An unwritten bond between two aromatic atoms that lies on no cycle
    (biphenyl's ``c1ccccc1c1ccccc1``) is single."""
    import networkx as nx

    G = nx.MultiGraph()
    G.add_nodes_from(range(len(ag.atoms)))
    G.add_edges_from((i, j) for i, j, _ in ag.bonds)
    bridges = {(min(e), max(e)) for e in nx.bridges(G)}
    for k in candidates:
        i, j, _ = ag.bonds[k]
        if (min(i, j), max(i, j)) in bridges:
            ag.bonds[k] = (i, j, BondType.SINGLE)


# ---------------------------------------------------------------------------
# ring perception


@dataclass(frozen=True)
class Ring:
    atoms: tuple[int, ...]  # cyclic order
    isolated: bool

    @property
    def size(self) -> int:
        return len(self.atoms)


def perceive_rings(ag: AtomGraph) -> list[Ring]:
    """Shortest-cycle basis (BFS per edge), with fundamental cycles as backfill."""
    n = len(ag.atoms)
    adj = [[] for _ in range(n)]
    for k, (i, j, _) in enumerate(ag.bonds):
        adj[i].append((j, k))
        adj[j].append((i, k))
    # number of components
    comp = [-1] * n
    ncomp = 0
    for s in range(n):
        if comp[s] >= 0:
            continue
        comp[s] = ncomp
        stack = [s]
        while stack:
            x = stack.pop()
            for y, _ in adj[x]:
                if comp[y] < 0:
                    comp[y] = ncomp
                    stack.append(y)
        ncomp += 1
    rank_needed = len(ag.bonds) - n + ncomp
    if rank_needed <= 0:
        return []

    def shortest_cycle(k):
        a, b, _ = ag.bonds[k]
        prev = {a: (-1, -1)}
        dq = deque([a])
        while dq:
            x = dq.popleft()
            if x == b:
                break
            for y, e in sorted(adj[x]):
                if e == k or y in prev:
                    continue
                prev[y] = (x, e)
                dq.append(y)
        if b not in prev:
            return None
        path, mask = [b], 1 << k
        x = b
        while x != a:
            x, e = prev[x]
            mask |= 1 << e
            path.append(x)
        return mask, tuple(reversed(path))

    cands = {}
    for k in range(len(ag.bonds)):
        c = shortest_cycle(k)
        if c is not None and c[0] not in cands:
            cands[c[0]] = c[1]
    ordered = sorted(cands.items(), key=lambda kv: (len(kv[1]), kv[1]))

    basis: dict[int, int] = {}
    chosen = []

    def insert(mask):
        v = mask
        while v:
            top = v.bit_length() - 1
            if top not in basis:
                basis[top] = v
                return True
            v ^= basis[top]
        return False

    for mask, atoms in ordered:
        if insert(mask):
            chosen.append(atoms)
        if len(chosen) == rank_needed:
            break
    if len(chosen) < rank_needed:
        # fundamental cycles of a BFS spanning forest complete the basis
        parent = {}
        for s in range(n):
            if s in parent:
                continue
            parent[s] = (-1, -1)
            dq = deque([s])
            while dq:
                x = dq.popleft()
                for y, e in adj[x]:
                    if y not in parent:
                        parent[y] = (x, e)
                        dq.append(y)
        tree = {e for _, e in parent.values() if e >= 0}
        for k, (a, b, _) in enumerate(ag.bonds):
            if k in tree:
                continue
            pa, pb = _root_path(parent, a), _root_path(parent, b)
            common = set(pa) & set(pb)
            la = [x for x in pa if x not in common]
            lb = [x for x in pb if x not in common]
            meet = next(x for x in pa if x in common)
            atoms = tuple(la + [meet] + list(reversed(lb)))
            mask = 0
            for i in range(len(atoms)):
                x, y = atoms[i], atoms[(i + 1) % len(atoms)]
                mask |= 1 << next(e for z, e in adj[x] if z == y)
            if insert(mask):
                chosen.append(atoms)
            if len(chosen) == rank_needed:
                break
    count: dict[int, int] = {}
    for atoms in chosen:
        for a in atoms:
            count[a] = count.get(a, 0) + 1
    return [Ring(atoms, all(count[a] == 1 for a in atoms)) for atoms in chosen]


def _root_path(parent, x):
    out = [x]
    while parent[x][0] >= 0:
        x = parent[x][0]
        out.append(x)
    return out


# ---------------------------------------------------------------------------
# collapse to substructures


def _match_ring(ag, adj, ring: Ring, vocab: SubstructureVocab):
    n = ring.size
    members = set(ring.atoms)
    sigs = []
    for a in ring.atoms:
        atom = ag.atoms[a]
        bonds = [b for _, b in adj[a]]
        ext = sum(b.order for y, b in adj[a] if y not in members)
        h = implicit_hcount(atom, bonds)
        sigs.append((atom.element, atom.aromatic, atom.charge, h + ext))
    bond_of = {}
    for i, j, b in ag.bonds:
        bond_of[(i, j)] = bond_of[(j, i)] = b
    rb = [bond_of[(ring.atoms[i], ring.atoms[(i + 1) % n])] for i in range(n)]
    for ent in vocab:
        if not ent.is_ring or ent.ring_size != n:
            continue
        t = ent.template
        for r in range(n):
            for d in (1, -1):
                idx = [(r + d * p) % n for p in range(n)]
                if any(sigs[idx[p]] != t.signature(p) for p in range(n)):
                    continue
                if d == 1:
                    ok = all(rb[idx[p]] == t.bonds[p] for p in range(n))
                else:
                    ok = all(rb[(idx[p] - 1) % n] == t.bonds[p] for p in range(n))
                if ok:
                    return ent.id, {ring.atoms[idx[p]]: p for p in range(n)}
    return None


def collapse(ag: AtomGraph, vocab: SubstructureVocab) -> MolGraph:
    """Map an atom graph onto substructure nodes.

    Isolated simple rings that match a ring entry become one node; every
    other atom maps to its element entry.
    """
    adj = ag.neighbors()
    ring_of: dict[int, tuple[int, int, int]] = {}  # atom -> (ring no, vocab id, pos)
    for rno, ring in enumerate(perceive_rings(ag)):
        if not ring.isolated:
            continue
        m = _match_ring(ag, adj, ring, vocab)
        if m is None:
            continue
        vid, pos = m
        for a, p in pos.items():
            ring_of[a] = (rno, vid, p)
    node_of = [-1] * len(ag.atoms)
    pos_of = [-1] * len(ag.atoms)
    nodes: list[int] = []
    ring_node: dict[int, int] = {}
    for a, atom in enumerate(ag.atoms):
        if a in ring_of:
            rno, vid, p = ring_of[a]
            if rno not in ring_node:
                ring_node[rno] = len(nodes)
                nodes.append(vid)
            node_of[a], pos_of[a] = ring_node[rno], p
        else:
            vid = vocab.get(atom.element)
            if vid is None or vocab[vid].is_ring:
                raise UnknownAtomError(f"atom {atom.element!r} not in vocabulary", atom.offset)
            node_of[a] = len(nodes)
            nodes.append(vid)
    edges = []
    for i, j, b in ag.bonds:
        ni, nj = node_of[i], node_of[j]
        if ni == nj:
            continue
        edges.append((ni, nj, b, pos_of[i], pos_of[j]))
    try:
        return MolGraph(vocab, nodes, edges)
    except GraphError as exc:  # pragma: no cover - excluded by ring isolation
        raise SmilesSyntaxError(str(exc), 0) from exc


def parse_smiles(s: str, vocab: SubstructureVocab) -> MolGraph:
    from .chem import check_validity

    ag = read_atom_graph(s)
    g = collapse(ag, vocab)
    report = check_validity(g)
    if not report.valid:
        node, reason = report.violations[0]
        offset = 0
        if node >= 0:
            # first atom owned by the offending node
            _, owner, _ = expand(g)
            offset = next((ag.atoms[k].offset for k in range(len(ag.atoms))
                           if k < len(owner) and owner[k] == node), 0)
        raise ValenceError(f"valence violation: {reason}", max(offset, 0))
    return g


# ---------------------------------------------------------------------------
# writing

_AROMATIC_LOWER = {v: k for k, v in AROMATIC_SYMBOLS.items()}


def _atom_text(atom: Atom, implicit_ok: bool) -> str:
    sym = atom.element
    if atom.aromatic:
        sym = _AROMATIC_LOWER.get(sym, sym)
    plain = (not atom.bracket and atom.charge == 0 and atom.hcount is None
             and atom.element in ORGANIC_SUBSET and implicit_ok)
    if plain:
        return sym
    out = "[" + sym
    h = atom.hcount or 0
    if h:
        out += "H" + (str(h) if h > 1 else "")
    if atom.charge:
        out += ("+" if atom.charge > 0 else "-") + (str(abs(atom.charge)) if abs(atom.charge) > 1 else "")
    return out + "]"


def write_atom_graph(ag: AtomGraph) -> str:
    n = len(ag.atoms)
    if n == 0:
        raise SmilesWriteError("cannot write an empty graph")
    adj = [sorted(a) for a in ag.neighbors()]
    visited = [False] * n
    children: list[list[tuple[int, BondType]]] = [[] for _ in range(n)]
    opens: list[list[tuple[int, BondType]]] = [[] for _ in range(n)]
    closes: list[list[int]] = [[] for _ in range(n)]
    order = []
    seen_back = set()

    stack = [(0, -1, None)]
    # iterative DFS preserving sorted neighbour order
    while stack:
        a, parent, pbond = stack.pop()
        if visited[a]:
            continue
        visited[a] = True
        order.append(a)
        if parent >= 0:
            children[parent].append((a, pbond))
        pending = []
        for b, bond in adj[a]:
            if b == parent:
                continue
            if visited[b]:
                key = (min(a, b), max(a, b))
                if key not in seen_back:
                    seen_back.add(key)
                    opens[b].append((a, bond))
                    closes[a].append(b)
            else:
                pending.append((b, a, bond))
        for item in reversed(pending):
            stack.append(item)
    if not all(visited):
        raise SmilesWriteError("graph is disconnected")

    # children may have been claimed by an earlier sibling's subtree; the
    # list above is in visiting order, which is what the text needs
    def bond_text(a, b, bond):
        default = (BondType.AROMATIC if ag.atoms[a].aromatic and ag.atoms[b].aromatic
                   else BondType.SINGLE)
        return "" if bond == default else bond.symbol

    digit_of: dict[tuple[int, int], int] = {}
    free_digits = list(range(1, 10)) + [0]
    out: list[str] = []

    def emit(a):
        out.append(_atom_text(ag.atoms[a], True))
        for b in closes[a]:
            d = digit_of.pop((b, a))
            out.append(str(d))
            free_digits.append(d)
            free_digits.sort(key=lambda x: (x == 0, x))
        for b, bond in opens[a]:
            if not free_digits:
                raise SmilesWriteError("more than 10 simultaneous ring closures")
            d = free_digits.pop(0)
            digit_of[(a, b)] = d
            out.append(bond_text(a, b, bond) + str(d))
        kids = children[a]
        for idx, (c, bond) in enumerate(kids):
            last = idx == len(kids) - 1
            if not last:
                out.append("(")
            out.append(bond_text(a, c, bond))
            emit(c)
            if not last:
                out.append(")")

    import sys

    limit = sys.getrecursionlimit()
    if n + 100 > limit:
        sys.setrecursionlimit(n + 200)
    emit(0)
    return "".join(out)


def write_smiles(g: MolGraph) -> str:
    for s in g.nodes:
        ent = g.vocab[s]
        if not ent.is_ring and ent.label not in _ELEMENT_SET:
            raise SmilesWriteError(f"vocabulary entry {ent.label!r} has no SMILES spelling")
    ag, _, _ = expand(g)
    return write_atom_graph(ag)


# ---------------------------------------------------------------------------
# corpus files


def read_corpus(path) -> list[tuple[str, str]]:
    """``SMILES[<tab>name]`` per line; ``#`` lines and blanks are skipped."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        out.append((parts[0].strip(), parts[1].strip() if len(parts) > 1 else ""))
    return out

"""Validity rules and enumeration of legal bonds and ring attachments."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .molgraph import ALL_BONDS, BondType, MolGraph, canonical_key


@dataclass
class ValidityReport:
    valid: bool = True
    violations: list[tuple[int, str]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.valid


def _valence_used(g: MolGraph, i: int) -> int:
    # aromatic bonds count 1.5; the floor absorbs the half of a lone aromatic bond
    return math.floor(sum(e.bond.order for e in g.incident(i)) + 1e-9)


def node_violations(g: MolGraph, i: int) -> list[str]:
    ent = g.entry(i)
    out = []
    if ent.is_ring:
        deg = g.degree(i)
        if deg > ent.attachment_capacity:
            out.append(f"{ent.label}: {deg} external bonds exceed capacity {ent.attachment_capacity}")
        free = ent.template.free
        for p, load in sorted(g.position_load(i).items()):
            if load > free[p] + 1e-9:
                out.append(f"{ent.label}: position {p} carries order {load:g} > {free[p]}")
    else:
        used = _valence_used(g, i)
        if used > ent.max_valence:
            out.append(f"{ent.label}: bond order {used} exceeds valence {ent.max_valence}")
    return out


def is_bridge(g: MolGraph, u: int, v: int) -> bool:
    """True when removing edge ``u-v`` disconnects ``g``."""
    if len(g.edges) == g.n - 1:
        return True  # connected trees: every edge is a bridge
    seen, stack = {u}, [u]
    while stack:
        x = stack.pop()
        for y in g.neighbors(x):
            if y in seen or (x == u and y == v) or (x == v and y == u):
                continue
            if y == v:
                return False
            seen.add(y)
            stack.append(y)
    return True


def aromatic_bridges(g: MolGraph) -> list[tuple[int, int]]:
    # an aromatic bond must lie on a cycle; a bridge cannot be part of one
    return [(e.u, e.v) for e in g.edges
            if e.bond == BondType.AROMATIC and is_bridge(g, e.u, e.v)]


def locally_valid(g: MolGraph, nodes) -> bool:
    return not any(node_violations(g, i) for i in nodes)


def check_validity(g: MolGraph) -> ValidityReport:
    report = ValidityReport()
    if g.n == 0:
        report.violations.append((-1, "empty graph"))
    for i in range(g.n):
        for reason in node_violations(g, i):
            report.violations.append((i, reason))
    if g.n > 0 and not g.is_connected():
        report.violations.append((-1, "graph is disconnected"))
    else:
        for u, v in aromatic_bridges(g):
            report.violations.append((u, f"aromatic bond {u}-{v} is not on a cycle"))
    report.valid = not report.violations
    return report


def is_valid(g: MolGraph) -> bool:
    return check_validity(g).valid


def enumerate_bond_types(g: MolGraph, u: int, v: int, pos_u: int | None = None,
                         pos_v: int | None = None, bonds=ALL_BONDS,
                         local: bool = False) -> list[BondType]:
    """Bond types ``b`` for which ``g`` with edge ``u-v`` set to ``b`` is valid.

    Positions default to the existing edge's; a new edge touching a ring
    node needs them spelled out.  ``local`` restricts the check to the two
    endpoints (used while a graph is being rebuilt edge by edge).
    """
    if u == v:
        raise ValueError("u and v must differ")
    e = g.edge_between(u, v)
    if pos_u is None:
        pos_u = e.pos_at(u) if e is not None else -1
    if pos_v is None:
        pos_v = e.pos_at(v) if e is not None else -1
    for x, p in ((u, pos_u), (v, pos_v)):
        if g.entry(x).is_ring and p < 0:
            raise ValueError(f"edge to ring node {x} needs a position")
    out = []
    for b in bonds:
        h = g.with_edge(u, v, b, pos_u, pos_v)
        if local:
            ok = locally_valid(h, (u, v)) and not (b == BondType.AROMATIC and is_bridge(h, u, v))
        else:
            ok = check_validity(h).valid
        if ok:
            out.append(BondType(b))
    return out


def free_positions(g: MolGraph, i: int) -> list[int]:
    """Ring positions of node ``i`` with spare hydrogen capacity."""
    ent = g.entry(i)
    load = g.position_load(i)
    return [p for p, f in enumerate(ent.template.free) if f - load.get(p, 0.0) >= 1 - 1e-9]


def _orbit_reps(g: MolGraph, i: int, positions) -> list[int]:
    """Drop positions equivalent to a smaller one under ring symmetries that
    fix every occupied position of node ``i``."""
    ent = g.entry(i)
    occupied = {e.pos_at(i) for e in g.incident(i)}
    stab = [s for s in ent.template.symmetries if all(s[p] == p for p in occupied)]
    reps = []
    for p in positions:
        if all(s[p] >= p for s in stab):
            reps.append(p)
    return reps


def ring_attachment_options(g: MolGraph, u: int, v: int, pos_v: int | None = None,
                            bonds=ALL_BONDS, local: bool = False):
    """Legal ``(pos_u, pos_v, bond)`` triples for a new edge ``u-v``.

    ``u`` must be a ring node.  If ``v`` is also a ring and ``pos_v`` is
    None, its positions are enumerated too.
    """
    if not g.entry(u).is_ring:
        raise ValueError(f"node {u} is not a ring")
    pu_list = _orbit_reps(g, u, free_positions(g, u))
    if g.entry(v).is_ring:
        pv_list = [pos_v] if pos_v is not None else _orbit_reps(g, v, free_positions(g, v))
    else:
        pv_list = [-1]
    out = []
    for pu, pv in itertools.product(pu_list, pv_list):
        for b in enumerate_bond_types(g, u, v, pu, pv, bonds, local=local):
            out.append((pu, pv, b))
    return out


def enumerate_ring_attachments(g: MolGraph, ring_node: int, neighbor: int,
                               neighbor_pos: int | None = None,
                               bonds=ALL_BONDS) -> list[MolGraph]:
    """All distinct valid graphs obtained by joining ``ring_node`` to ``neighbor``.

    One candidate per attachment position x bond type, deduplicated by
    canonical key.  An existing edge between the two is replaced.
    """
    base = g
    if g.edge_between(ring_node, neighbor) is not None:
        e = g.edge_between(ring_node, neighbor)
        if neighbor_pos is None and g.entry(neighbor).is_ring:
            neighbor_pos = e.pos_at(neighbor)
        base = g.with_nodes_edges(
            g.nodes, [x for x in g.edges if {x.u, x.v} != {ring_node, neighbor}])
    if base.degree(ring_node) >= base.entry(ring_node).attachment_capacity:
        return []
    seen = {}
    for pu, pv, b in ring_attachment_options(base, ring_node, neighbor, neighbor_pos, bonds):
        h = base.with_edge(ring_node, neighbor, b, pu, pv)
        if not check_validity(h).valid:
            continue
        k = canonical_key(h, cap=None)
        if k not in seen:
            seen[k] = h
    return list(seen.values())

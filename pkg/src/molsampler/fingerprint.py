"""Circular substructure-environment fingerprints and Tanimoto similarity.

Environments are grown on the substructure graph: radius 0 is the node
label, radius r combines the node's radius r-1 identifier with the sorted
(bond, neighbour identifier) pairs.  Each identifier is a 64-bit FNV-1a
hash of that serialization, folded to the fingerprint width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .molgraph import MolGraph

DEFAULT_RADIUS = 2
DEFAULT_WIDTH = 2048


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    width: int = DEFAULT_WIDTH

    def __post_init__(self):
        if self.width <= 0 or self.width & (self.width - 1):
            raise ValueError(f"width must be a power of two, got {self.width}")
        if self.bits < 0 or self.bits >> self.width:
            raise ValueError("bits out of range for width")

    @property
    def set_count(self) -> int:
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        out, b, i = [], self.bits, 0
        while b:
            if b & 1:
                out.append(i)
            b >>= 1
            i += 1
        return out

    @classmethod
    def from_bits(cls, on_bits, width: int = DEFAULT_WIDTH) -> "Fingerprint":
        v = 0
        for i in on_bits:
            v |= 1 << int(i)
        return cls(v, width)


def hash_strings(items: list[str]) -> np.ndarray:
    data = [s.encode() for s in items]
    offsets = np.zeros(len(data) + 1, dtype=np.int64)
    np.cumsum([len(d) for d in data], out=offsets[1:])
    buf = np.frombuffer(b"".join(data), dtype=np.uint8) if data else np.zeros(0, np.uint8)
    return _kernels.fnv1a64(buf, offsets)


def environment_ids(g: MolGraph, radius: int = DEFAULT_RADIUS) -> list[list[int]]:
    """Per radius, the 64-bit identifier of every node's environment."""
    labels = [g.vocab[s].label for s in g.nodes]
    adj = g.adjacency
    ids = [int(h) for h in hash_strings([f"0|{lab}" for lab in labels])]
    out = [ids]
    for r in range(1, radius + 1):
        prev = out[-1]
        texts = []
        for i in range(g.n):
            nb = sorted((int(g.edges[k].bond), prev[j]) for j, k in adj[i])
            texts.append(f"{r}|{prev[i]}|" + ",".join(f"{b}:{h}" for b, h in nb))
        out.append([int(h) for h in hash_strings(texts)])
    return out


def fingerprint(g: MolGraph, radius: int = DEFAULT_RADIUS, width: int = DEFAULT_WIDTH) -> Fingerprint:
    if width <= 0 or width & (width - 1):
        raise ValueError(f"width must be a power of two, got {width}")
    mask = width - 1
    bits = 0
    for level in environment_ids(g, radius):
        for h in level:
            bits |= 1 << (h & mask)
    return Fingerprint(bits, width)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.width != b.width:
        raise ValueError(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union

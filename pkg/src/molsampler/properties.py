"""Property scorers and the log target density over molecules.

All bundled scorers are surrogates: a per-substructure additive
lipophilicity table, a penalized variant of it, and a drug-likeness
product of desirability ramps.  Scores computed by external tools plug in
through :func:`external_table_scorer`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .chem import is_valid
from .fingerprint import DEFAULT_RADIUS, DEFAULT_WIDTH, Fingerprint, fingerprint, tanimoto
from .molgraph import MolGraph, SubstructureVocab, canonical_key, expand

NEG_INF = float("-inf")


class ScorerError(RuntimeError):
    def __init__(self, name: str, exc: BaseException):
        super().__init__(f"scorer {name!r} failed: {exc}")
        self.scorer = name


@dataclass(frozen=True)
class PropertyScorer:
    name: str
    score: Callable[[MolGraph], float]

    def __call__(self, g: MolGraph) -> float:
        try:
            return float(self.score(g))
        except ScorerError:
            raise
        except Exception as exc:
            raise ScorerError(self.name, exc) from exc


# ---------------------------------------------------------------------------
# contribution tables


def read_table(path) -> dict[str, float]:
    """Two-column ``key<TAB>value`` file; ``#`` lines are comments."""
    out = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected key<TAB>value")
        out[parts[0].strip()] = float(parts[1])
    return out


_DEFAULT_CONTRIB: dict[str, float] | None = None


def default_contributions() -> dict[str, float]:
    global _DEFAULT_CONTRIB
    if _DEFAULT_CONTRIB is None:
        with resources.as_file(resources.files("molsampler.data") / "logp_contrib.tsv") as p:
            _DEFAULT_CONTRIB = read_table(p)
    return _DEFAULT_CONTRIB


def logp_surrogate(g: MolGraph, table: dict[str, float] | None = None) -> float:
    table = default_contributions() if table is None else table
    total = 0.0
    for s in g.nodes:
        label = g.vocab[s].label
        try:
            total += table[label]
        except KeyError:
            raise KeyError(f"no lipophilicity contribution for {label!r}") from None
    return total


def long_cycle_count(g: MolGraph, min_size: int = 7) -> int:
    from .smiles import perceive_rings

    if len(g.edges) == g.n - 1 and g.is_connected():
        # a tree of substructures has no cycles beyond the ring nodes' own
        return sum(1 for s in g.nodes if g.vocab[s].is_ring and g.vocab[s].ring_size >= min_size)
    ag, _, _ = expand(g)
    return sum(1 for r in perceive_rings(ag) if r.size >= min_size)


def ring_node_count(g: MolGraph) -> int:
    return sum(1 for s in g.nodes if g.vocab[s].is_ring)


def sa_surrogate(g: MolGraph, c1: float = 0.05, c2: float = 0.25) -> float:
    return c1 * g.n + c2 * ring_node_count(g)


def plogp_surrogate(g: MolGraph, c1: float = 0.05, c2: float = 0.25,
                    table: dict[str, float] | None = None) -> float:
    return logp_surrogate(g, table) - sa_surrogate(g, c1, c2) - long_cycle_count(g)


def _ramp(x: float, a: float, b: float, c: float, d: float, floor: float = 0.1) -> float:
    """Trapezoid: 0 below a, rising to 1 on [b, c], back to 0 at d; clamped at ``floor``."""
    if x <= a or x >= d:
        v = 0.0
    elif x < b:
        v = (x - a) / (b - a)
    elif x <= c:
        v = 1.0
    else:
        v = (d - x) / (d - c)
    return max(v, floor)


def qed_surrogate(g: MolGraph, table: dict[str, float] | None = None) -> float:
    """Drug-likeness surrogate in (0, 1]; not the real QED."""
    return (_ramp(g.n, 1, 8, 25, 45)
            * _ramp(logp_surrogate(g, table), -2.0, 1.0, 4.0, 7.0)
            * _ramp(ring_node_count(g), -1, 1, 3, 6))


def external_table_scorer(path, name: str | None = None, default: float = -1.0,
                          vocab: SubstructureVocab | None = None) -> PropertyScorer:
    """Look up precomputed scores keyed by SMILES or canonical key.

    With a vocabulary, SMILES keys are parsed once so that any spelling of
    the same molecule hits the entry; keys that do not parse are matched
    verbatim against the written SMILES of the query.
    """
    path = Path(path)
    try:
        raw = read_table(path)
    except OSError as exc:
        raise ValueError(f"cannot read score table {path}: {exc}") from exc
    from .smiles import SmilesError, parse_smiles, write_smiles

    by_key: dict[str, float] = {}
    by_text: dict[str, float] = {}
    for k, v in raw.items():
        by_text[k] = v
        if vocab is not None:
            try:
                by_key[canonical_key(parse_smiles(k, vocab), cap=None)] = v
            except (SmilesError, ValueError):
                pass

    def score(g: MolGraph) -> float:
        key = canonical_key(g, cap=None)
        if key in by_key:
            return by_key[key]
        if key in by_text:
            return by_text[key]
        return by_text.get(write_smiles(g), default)

    return PropertyScorer(name or path.stem, score)


def builtin_scorer(name: str, c1: float = 0.05, c2: float = 0.25) -> PropertyScorer:
    if name == "logp":
        return PropertyScorer("logp", logp_surrogate)
    if name == "plogp":
        return PropertyScorer("plogp", lambda g: plogp_surrogate(g, c1, c2))
    if name == "qed":
        return PropertyScorer("qed", qed_surrogate)
    raise ValueError(f"unknown scorer {name!r} (expected logp, plogp or qed)")


# ---------------------------------------------------------------------------
# target distribution


@dataclass
class TargetDistConfig:
    """Weights and scorers defining the unnormalized log density around ``x``.

    ``max_nodes`` optionally truncates the support (used to make small state
    spaces finite); molecules above it get log density -inf.
    """

    x: MolGraph
    eta: Sequence[float]
    scorers: Sequence[PropertyScorer] = ()
    max_nodes: int | None = None
    radius: int = DEFAULT_RADIUS
    width: int = DEFAULT_WIDTH
    fp_x: Fingerprint = field(init=False)
    props_x: tuple[float, ...] = field(init=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.eta = tuple(float(e) for e in self.eta)
        self.scorers = tuple(self.scorers)
        if any(not math.isfinite(e) or e < 0 for e in self.eta):
            raise ValueError("all eta weights must be finite and non-negative")
        if len(self.scorers) != len(self.eta) - 1:
            raise ValueError(f"{len(self.eta)} eta weights need {len(self.eta) - 1} scorers, "
                             f"got {len(self.scorers)}")
        self.fp_x = fingerprint(self.x, self.radius, self.width)
        self.props_x = tuple(s(self.x) for s in self.scorers)

    def similarity(self, y: MolGraph) -> float:
        return tanimoto(self.fp_x, fingerprint(y, self.radius, self.width))

    def properties(self, y: MolGraph) -> tuple[float, ...]:
        return tuple(s(y) for s in self.scorers)

    def deltas(self, y: MolGraph) -> tuple[float, ...]:
        return tuple(p - q for p, q in zip(self.properties(y), self.props_x))


def log_target_density(cfg: TargetDistConfig, y: MolGraph) -> float:
    key = y.struct
    hit = cfg._cache.get(key)
    if hit is not None:
        return hit
    if (cfg.max_nodes is not None and y.n > cfg.max_nodes) or not is_valid(y):
        val = NEG_INF
    else:
        val = cfg.eta[0] * cfg.similarity(y)
        for w, s, px in zip(cfg.eta[1:], cfg.scorers, cfg.props_x):
            val += w * (s(y) - px)
    if len(cfg._cache) > 500_000:
        cfg._cache.clear()
    cfg._cache[key] = val
    return val

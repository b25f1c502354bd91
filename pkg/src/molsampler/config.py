"""Run profiles: INI files with one section per concern.

Relative paths are resolved against the profile's directory.  The only
environment override is the RNG seed (``MOLSAMPLER_SEED``).
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .gnn import TrainConfig
from .molgraph import ALL_BONDS, BondType, SubstructureVocab
from .proposal import ProposalConfig
from .sampler import KernelConfig, RunConfig

SEED_ENV = "MOLSAMPLER_SEED"

_BOND_NAMES = {b.name.lower(): b for b in ALL_BONDS}

# success templates: (similarity floor, {property: minimum improvement})
SUCCESS_TEMPLATES = {
    "plogp": (0.4, {"plogp": 0.5}),
    "qed": (0.4, {"qed": 0.1}),
    "drd": (0.4, {"drd": 0.2}),
    "qed_plogp": (0.3, {"qed": 0.1, "plogp": 0.3}),
    "drd_plogp": (0.3, {"drd": 0.2, "plogp": 0.3}),
}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.replace(",", " ").split() if x.strip()]


def _bonds(text: str) -> tuple[BondType, ...]:
    out = []
    for name in _names(text):
        if name.lower() not in _BOND_NAMES:
            raise ConfigError(f"unknown bond type {name!r}")
        out.append(_BOND_NAMES[name.lower()])
    return tuple(out)


def _opt_int(text: str | None) -> int | None:
    return int(text) if text not in (None, "") else None


@dataclass
class MetricThresholds:
    sim: float
    deltas: dict[str, float]

    @classmethod
    def template(cls, name: str) -> "MetricThresholds":
        if name not in SUCCESS_TEMPLATES:
            raise ConfigError(f"unknown success rule {name!r}; known: {sorted(SUCCESS_TEMPLATES)}")
        sim, d = SUCCESS_TEMPLATES[name]
        return cls(sim, dict(d))


@dataclass
class VerifySettings:
    vocab: list[str] = field(default_factory=lambda: ["C", "O"])
    max_nodes: int = 3
    bond_types: tuple[BondType, ...] = (BondType.SINGLE,)
    x: str = "CCO"
    eta: tuple[float, ...] = (1.0, 0.3)
    scorers: list[str] = field(default_factory=lambda: ["plogp"])
    kernel: KernelConfig = field(default_factory=KernelConfig)
    models: str = "uniform"
    tv_steps: int = 1_000_000
    tv_route: str = "sampled"
    stat_tol: float = 1e-9
    balance_tol: float = 1e-9
    tv_tol: float = 0.05


@dataclass
class RunProfile:
    path: Path | None
    sha256: str
    text: str
    vocab_spec: str
    corpus: str
    checkpoints: Path
    score_tables: dict[str, Path]
    eta: tuple[float, ...]
    scorers: list[str]
    plogp_c: tuple[float, float]
    max_nodes: int | None
    kernel: KernelConfig
    run: RunConfig
    write_pool: bool
    proposal: ProposalConfig
    train: TrainConfig
    synthetic_graphs: int
    thresholds: MetricThresholds
    verify: VerifySettings

    def vocab(self) -> SubstructureVocab:
        if self.vocab_spec in ("desk", "full"):
            return SubstructureVocab.builtin(self.vocab_spec)
        return SubstructureVocab.from_file(self.vocab_spec)

    def with_seed(self, seed: int) -> "RunProfile":
        from dataclasses import replace

        return replace(self, run=replace(self.run, seed=seed), train=replace(self.train, seed=seed))


def builtin_profile_path(name: str) -> Path:
    return Path(str(resources.files("molsampler.data") / f"{name}.ini"))


def load_profile(path=None, text: str | None = None) -> RunProfile:
    """Parse and validate a profile; raises :class:`ConfigError` on any problem."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    base = Path.cwd()
    if text is None:
        if path is None:
            path = builtin_profile_path("optimize")
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"profile not found: {path}")
        text = path.read_text()
        base = path.parent
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse profile: {exc}") from exc
    sha = hashlib.sha256(text.encode()).hexdigest()

    def get(sec, key, default=None):
        if cp.has_option(sec, key):
            v = cp.get(sec, key).strip()
            return v if v != "" else default
        return default

    def names_or(sec, key, default):
        # an explicitly empty value means "none", unlike a missing key
        return _names(cp.get(sec, key)) if cp.has_option(sec, key) else _names(default)

    def resolve(p: str) -> Path:
        q = Path(p).expanduser()
        return q if q.is_absolute() else base / q

    try:
        vocab_spec = get("paths", "vocab", "desk")
        if vocab_spec not in ("desk", "full"):
            vp = resolve(vocab_spec)
            if not vp.is_file():
                raise ConfigError(f"vocabulary file not found: {vp}")
            vocab_spec = str(vp)
        corpus = get("paths", "corpus", "synthetic")
        if corpus != "synthetic":
            cpth = resolve(corpus)
            if not cpth.is_file():
                raise ConfigError(f"corpus file not found: {cpth}")
            corpus = str(cpth)
        ck = get("paths", "checkpoints", "checkpoints")
        checkpoints = Path("uniform") if ck == "uniform" else resolve(ck)
        tables = {}
        for item in _names(get("paths", "score_tables", "") or ""):
            if "=" not in item:
                raise ConfigError(f"score table entry {item!r} must be name=path")
            name, p = item.split("=", 1)
            tp = resolve(p)
            if not tp.is_file():
                raise ConfigError(f"score table not found: {tp}")
            tables[name] = tp

        eta = _floats(get("target", "eta", "1.0 0.3"))
        scorers = names_or("target", "scorers", "plogp")
        if len(scorers) != len(eta) - 1:
            raise ConfigError(f"{len(eta)} eta weights need {len(eta) - 1} scorers, got {len(scorers)}")
        for s in scorers:
            if s not in ("logp", "plogp", "qed") and s not in tables:
                raise ConfigError(f"scorer {s!r} is neither built in nor a score table")
        plogp_c = (float(get("target", "plogp_c1", "0.05")), float(get("target", "plogp_c2", "0.25")))
        max_nodes = _opt_int(get("target", "max_nodes"))

        kernel = KernelConfig(
            _floats(get("kernel", "gamma", "0.5 0.25 0.25")),
            get("kernel", "weight_convention", "model_ratio"),
            get("kernel", "mode", "population"),
            cp.getboolean("kernel", "allow_unbalanced", fallback=False),
        )
        run = RunConfig(int(get("run", "N", "20")), int(get("run", "T_max", "10")),
                        int(get("run", "T_burnin", "5")), int(get("run", "seed", "0")))
        write_pool = cp.getboolean("run", "write_pool", fallback=False)
        proposal = ProposalConfig(
            _bonds(get("proposal", "bond_types", "single double triple aromatic")),
            get("proposal", "add_mode", "bernoulli"),
            float(get("proposal", "add_threshold", "0.5")),
        )
        clip = get("train", "clip_norm")
        train = TrainConfig(
            batch_size=int(get("train", "batch_size", "256")),
            epochs=int(get("train", "epochs", "10")),
            lr=float(get("train", "lr", "1e-3")),
            seed=run.seed,
            d=int(get("train", "d", "300")),
            K=int(get("train", "K", "5")),
            dtype=get("train", "dtype", "float64"),
            clip_norm=float(clip) if clip is not None else None,
        )
        synthetic_graphs = int(get("train", "synthetic_graphs", "10000"))

        rule = get("metrics", "rule", "plogp")
        thresholds = MetricThresholds.template(rule) if rule != "custom" else MetricThresholds(0.4, {})
        if get("metrics", "sim_threshold") is not None:
            thresholds.sim = float(get("metrics", "sim_threshold"))
        for item in _names(get("metrics", "delta_thresholds", "") or ""):
            name, v = item.split(":", 1)
            thresholds.deltas[name] = float(v)

        vk = KernelConfig(
            _floats(get("verify", "gamma", "0.5 0.25 0.25")),
            get("verify", "weight_convention", "textbook_mh"),
            "mh_chain",
            cp.getboolean("verify", "allow_unbalanced", fallback=False),
        )
        verify = VerifySettings(
            vocab=_names(get("verify", "vocab", "C O")),
            max_nodes=int(get("verify", "max_nodes", "3")),
            bond_types=_bonds(get("verify", "bond_types", "single")),
            x=get("verify", "x", "CCO"),
            eta=_floats(get("verify", "eta", "1.0 0.3")),
            scorers=names_or("verify", "scorers", "plogp"),
            kernel=vk,
            models=get("verify", "models", "uniform"),
            tv_steps=int(get("verify", "tv_steps", "1000000")),
            tv_route=get("verify", "tv_route", "sampled"),
            stat_tol=float(get("verify", "stat_tol", "1e-9")),
            balance_tol=float(get("verify", "balance_tol", "1e-9")),
            tv_tol=float(get("verify", "tv_tol", "0.05")),
        )
        if verify.tv_route not in ("sampled", "tabulated"):
            raise ConfigError(f"[verify] tv_route must be sampled or tabulated, got {verify.tv_route!r}")
        if len(verify.scorers) != len(verify.eta) - 1:
            raise ConfigError(f"[verify] {len(verify.eta)} eta weights need "
                              f"{len(verify.eta) - 1} scorers, got {len(verify.scorers)}")
        if verify.models != "uniform":
            mp = resolve(verify.models)
            verify.models = str(mp)
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc

    return RunProfile(
        path=Path(path) if path is not None else None, sha256=sha, text=text, vocab_spec=vocab_spec,
        corpus=corpus, checkpoints=checkpoints, score_tables=tables, eta=eta, scorers=scorers,
        plogp_c=plogp_c, max_nodes=max_nodes, kernel=kernel, run=run, write_pool=write_pool,
        proposal=proposal,
        train=train, synthetic_graphs=synthetic_graphs, thresholds=thresholds, verify=verify,
    )


def resolve_seed(cli_seed: int | None, profile_seed: int) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV, "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return profile_seed


def verify_vocab(settings: VerifySettings) -> SubstructureVocab:
    return SubstructureVocab.from_labels(settings.vocab)

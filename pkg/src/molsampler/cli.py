"""Command line: ``molsampler {pretrain,optimize,verify,metrics}``.

Exit codes: 0 ok, 1 verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .config import ConfigError, MetricThresholds, RunProfile, load_profile, resolve_seed
from .gnn import (GnnModels, UniformModels, load_checkpoint, pretrain, save_checkpoint,
                  synthetic_rule_corpus)
from .molgraph import SubstructureVocab
from .properties import PropertyScorer, TargetDistConfig, builtin_scorer, external_table_scorer
from .sampler import RunConfig, best_output, run_population
from .smiles import SmilesError, parse_smiles, read_corpus, write_smiles

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MoleculeMetric:
    index: int
    input: str
    output: str
    similarity: float
    deltas: dict[str, float]
    success: bool


@dataclass
class MetricReport:
    rows: list[MoleculeMetric] = field(default_factory=list)
    thresholds: MetricThresholds | None = None
    skipped: int = 0

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.rows) / self.n if self.rows else 0.0

    def _stat(self, values):
        if not values:
            return (0.0, 0.0)
        a = np.asarray(values, dtype=np.float64)
        return (float(a.mean()), float(a.std()))

    @property
    def similarity(self) -> tuple[float, float]:
        return self._stat([r.similarity for r in self.rows])

    def delta(self, name: str) -> tuple[float, float]:
        return self._stat([r.deltas[name] for r in self.rows if name in r.deltas])

    def property_names(self) -> list[str]:
        names: list[str] = []
        for r in self.rows:
            for k in r.deltas:
                if k not in names:
                    names.append(k)
        return names

    def as_dict(self) -> dict:
        return {
            "n": self.n, "skipped": self.skipped, "success_rate": self.success_rate,
            "similarity": list(self.similarity),
            "deltas": {k: list(self.delta(k)) for k in self.property_names()},
            "thresholds": {"sim": self.thresholds.sim, "deltas": self.thresholds.deltas}
            if self.thresholds else None,
            "rows": [{"index": r.index, "input": r.input, "output": r.output,
                      "similarity": r.similarity, "deltas": r.deltas, "success": r.success}
                     for r in self.rows],
        }

    def text(self) -> str:
        s_mean, s_std = self.similarity
        lines = [f"molecules: {self.n} (skipped {self.skipped})",
                 f"similarity: {s_mean:.3f} +- {s_std:.3f}"]
        for k in self.property_names():
            m, sd = self.delta(k)
            lines.append(f"{k} improvement: {m:.3f} +- {sd:.3f}")
        lines.append(f"success rate: {100 * self.success_rate:.1f}%")
        return "\n".join(lines)


def is_success(sim: float, deltas: dict[str, float], th: MetricThresholds) -> bool:
    if not sim >= th.sim:
        return False
    return all(name in deltas and deltas[name] >= v for name, v in th.deltas.items())


def compute_metrics(results, thresholds: MetricThresholds) -> MetricReport:
    """Per-molecule success flags and aggregates from result rows.

    ``results`` holds dicts with ``similarity`` and ``delta_<name>`` fields
    (as written by ``optimize``); rows whose status is not ``ok`` are skipped.
    """
    rep = MetricReport(thresholds=thresholds)
    for i, row in enumerate(results):
        if row.get("status", "ok") != "ok":
            rep.skipped += 1
            continue
        sim = float(row["similarity"])
        deltas = {k[len("delta_"):]: float(v) for k, v in row.items() if k.startswith("delta_")}
        rep.rows.append(MoleculeMetric(int(row.get("index", i)), row.get("input", ""),
                                       row.get("output", ""), sim, deltas,
                                       is_success(sim, deltas, thresholds)))
    return rep


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


# ---------------------------------------------------------------------------
# shared plumbing


def _versions() -> dict[str, str]:
    from importlib import metadata

    out = {"python": platform.python_version()}
    for pkg in ("molsampler", "numpy", "scipy", "numba", "networkx"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "absent"
    return out


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, profile: RunProfile, seed: int, argv, extra=None):
    data = {
        "command": command,
        "argv": list(argv),
        "profile": str(profile.path) if profile.path else None,
        "profile_sha256": profile.sha256,
        "profile_text": profile.text,
        "seed": seed,
        "kernel_backend": _kernels.BACKEND,
        "versions": _versions(),
    }
    data.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _out_dir(args, default: Path | None = None) -> Path:
    if args.out:
        out = Path(args.out)
    elif default is not None:
        out = default
    else:
        raise ConfigError("--out is required for this command")
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_scorers(profile: RunProfile, vocab: SubstructureVocab) -> list[PropertyScorer]:
    scorers = []
    for name in profile.scorers:
        if name in profile.score_tables:
            scorers.append(external_table_scorer(profile.score_tables[name], name, vocab=vocab))
        else:
            scorers.append(builtin_scorer(name, *profile.plogp_c))
    return scorers


def load_models(profile: RunProfile, vocab: SubstructureVocab):
    if str(profile.checkpoints) == "uniform":
        return UniformModels(len(vocab))
    d = profile.checkpoints
    paths = [d / "mgnn.npz", d / "bgnn.npz"]
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"checkpoint not found: {p} (run pretrain first)")
    try:
        return GnnModels(load_checkpoint(paths[0], vocab), load_checkpoint(paths[1], vocab))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def input_seed(seed: int, index: int) -> int:
    """Per-input seed: independent of how many inputs precede or follow."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(profile: RunProfile, args) -> int:
    vocab = profile.vocab()
    if profile.corpus == "synthetic":
        corpus = synthetic_rule_corpus(vocab, profile.synthetic_graphs, seed=profile.train.seed)
        bad = 0
    else:
        corpus, bad = [], 0
        for smi, _ in read_corpus(profile.corpus):
            try:
                corpus.append(parse_smiles(smi, vocab))
            except SmilesError:
                bad += 1
        if not corpus:
            raise ConfigError(f"no molecule in {profile.corpus} parses with the vocabulary")
    default = None if str(profile.checkpoints) == "uniform" else profile.checkpoints
    out = _out_dir(args, default)
    mp, bp, hist = pretrain(corpus, profile.train, log=lambda m: print(m, flush=True))
    save_checkpoint(mp, out / "mgnn.npz", vocab)
    save_checkpoint(bp, out / "bgnn.npz", vocab)
    with open(out / "training_curve.tsv", "w") as fh:
        fh.write("epoch\tmgnn_loss\tbgnn_loss\n")
        for e, (a, b) in enumerate(zip(hist.mgnn_loss, hist.bgnn_loss), 1):
            fh.write(f"{e}\t{a!r}\t{b!r}\n")
    write_manifest(out, "pretrain", profile, profile.train.seed, args.argv,
                   {"corpus": profile.corpus, "corpus_size": len(corpus), "corpus_skipped": bad})
    print(f"wrote checkpoints to {out} ({len(corpus)} molecules, {bad} skipped)")
    return EXIT_OK


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_optimize(profile: RunProfile, args) -> int:
    if not args.inputs:
        raise ConfigError("optimize needs --inputs <file of SMILES>")
    inputs = Path(args.inputs)
    if not inputs.is_file():
        raise ConfigError(f"inputs file not found: {inputs}")
    vocab = profile.vocab()
    models = load_models(profile, vocab)
    scorers = build_scorers(profile, vocab)
    out = _out_dir(args)
    names = [s.name for s in scorers]
    n_err = 0
    with contextlib.ExitStack() as files:
        res = files.enter_context(open(out / "results.tsv", "w"))
        phif = files.enter_context(open(out / "phi.tsv", "w"))
        tr = files.enter_context(open(out / "trace.jsonl", "w"))
        pool = files.enter_context(open(out / "pool.tsv", "w")) if profile.write_pool else None
        res.write("\t".join(["index", "input", "output", "similarity"]
                            + [f"delta_{n}" for n in names] + ["log_density", "status"]) + "\n")
        phif.write("index\tsmiles\tlog_density\tsimilarity\n")
        if pool is not None:
            pool.write("index\titeration\top\tparent\tsmiles\tlog_density\tlog_weight\tcopies\n")
        for idx, (smi, _) in enumerate(read_corpus(inputs)):
            try:
                x = parse_smiles(smi, vocab)
            except SmilesError as exc:
                n_err += 1
                msg = f"error: {type(exc).__name__}: {exc}".replace("\t", " ")
                res.write("\t".join([str(idx), smi, "", "nan"] + ["nan"] * len(names)
                                    + ["nan", msg]) + "\n")
                tr.write(json.dumps({"index": idx, "event": "error", "message": msg}) + "\n")
                continue
            target = TargetDistConfig(x, profile.eta, scorers, profile.max_nodes)
            run = RunConfig(profile.run.N, profile.run.T_max, profile.run.T_burnin,
                            input_seed(profile.run.seed, idx))
            phi, trace = run_population(run, profile.kernel, target, models, cfg=profile.proposal)
            best, lp = best_output(phi, target)
            deltas = target.deltas(best)
            res.write("\t".join([str(idx), smi, write_smiles(best), _fmt(target.similarity(best))]
                                + [_fmt(d) for d in deltas] + [_fmt(lp), "ok"]) + "\n")
            for key in sorted(phi):
                g, glp = phi[key]
                phif.write(f"{idx}\t{write_smiles(g)}\t{_fmt(glp)}\t{_fmt(target.similarity(g))}\n")
            if pool is not None:
                for r in trace.records:
                    pool.write(f"{idx}\t{r['iteration']}\t{r['op']}\t{r['parent']}\t{r['smiles']}\t"
                               f"{_fmt(r['log_density'])}\t{_fmt(r['log_weight'])}\t{r['copies']}\n")
            for it in trace.iterations:
                tr.write(json.dumps({"index": idx, "event": "iteration", **it}, sort_keys=True) + "\n")
            for w in trace.warnings:
                tr.write(json.dumps({"index": idx, "event": "warning", "message": w}) + "\n")
            if trace.invalid_seen:
                tr.write(json.dumps({"index": idx, "event": "invalid_filtered",
                                     "count": trace.invalid_seen}) + "\n")
    write_manifest(out, "optimize", profile, profile.run.seed, args.argv,
                   {"inputs": str(inputs), "inputs_sha256": _sha256(inputs)})
    print(f"wrote {out / 'results.tsv'} ({n_err} input errors)")
    return EXIT_OK


def cmd_verify(profile: RunProfile, args) -> int:
    from .config import verify_vocab
    from .oracle import OracleError, enumerate_states, verify

    vs = profile.verify
    vocab = verify_vocab(vs)
    try:
        x = parse_smiles(vs.x, vocab)
    except SmilesError as exc:
        raise ConfigError(f"[verify] x: {exc}") from exc
    scorers = [builtin_scorer(s, *profile.plogp_c) for s in vs.scorers]
    target = TargetDistConfig(x, vs.eta, scorers, vs.max_nodes)
    if vs.models == "uniform":
        models = UniformModels(len(vocab))
    else:
        d = Path(vs.models)
        models = GnnModels(load_checkpoint(d / "mgnn.npz", vocab), load_checkpoint(d / "bgnn.npz", vocab))
    from .proposal import ProposalConfig

    cfg = ProposalConfig(bond_types=vs.bond_types)
    try:
        space = enumerate_states(vocab, vs.max_nodes, vs.bond_types)
        rep = verify(space, vs.kernel, target, models, cfg, tv_steps=vs.tv_steps,
                     seed=profile.run.seed, stat_tol=vs.stat_tol, balance_tol=vs.balance_tol,
                     tv_tol=vs.tv_tol, max_nodes=vs.max_nodes, tv_route=vs.tv_route)
    except OracleError as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    lines = [f"states: {rep.space_size}",
             f"weight convention: {rep.convention}, gamma {tuple(rep.gamma)}",
             f"stationarity L-inf: {rep.stationarity_linf:.3e} (tol {vs.stat_tol:g})",
             f"detailed balance: {rep.balance_violation:.3e} (tol {vs.balance_tol:g})",
             f"irreducible: {rep.irreducible}"]
    if rep.tv is not None:
        lines.append(f"TV after {rep.tv_steps} {rep.tv_route} steps: {rep.tv:.4f} (tol {vs.tv_tol:g})")
        lines.append(f"invalid proposals: {rep.invalid_proposals}")
    for k, ok in rep.passed.items():
        lines.append(f"{'PASS' if ok else 'FAIL'} {k}")
    print("\n".join(lines))
    if args.out:
        out = _out_dir(args)
        (out / "verify_report.json").write_text(json.dumps(rep.as_dict(), indent=2) + "\n")
        write_manifest(out, "verify", profile, profile.run.seed, args.argv)
    if not rep.ok:
        failed = ", ".join(k for k, ok in rep.passed.items() if not ok)
        print(f"verification failed: {failed}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_metrics(profile: RunProfile, args) -> int:
    if not args.inputs:
        raise ConfigError("metrics needs --inputs <results.tsv>")
    path = Path(args.inputs)
    if not path.is_file():
        raise ConfigError(f"results file not found: {path}")
    try:
        rows = read_results(path)
        rep = compute_metrics(rows, profile.thresholds)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed results file {path}: {exc}") from exc
    print(rep.text())
    if args.out:
        out = _out_dir(args)
        (out / "metrics.txt").write_text(rep.text() + "\n")
        (out / "metrics.json").write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n")
        write_manifest(out, "metrics", profile, profile.run.seed, args.argv,
                       {"results": str(path), "results_sha256": _sha256(path)})
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "optimize": cmd_optimize,
            "verify": cmd_verify, "metrics": cmd_metrics}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="molsampler", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--profile", help="INI profile (default: built-in optimize profile)")
        p.add_argument("--seed", type=int, help="RNG seed, overrides profile and MOLSAMPLER_SEED")
        p.add_argument("--out", help="output directory")
        p.add_argument("--inputs", help="input file (SMILES for optimize, results for metrics)")
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        profile = load_profile(args.profile)
        seed = resolve_seed(args.seed, profile.run.seed)
        if seed < 0 or seed >= 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
        profile = profile.with_seed(seed)
        return COMMANDS[args.command](profile, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Substructure-edit MCMC for multi-constraint molecule optimization.

The usual entry points::

    from molsampler import parse_smiles, SubstructureVocab, TargetDistConfig, run_population
"""

from importlib.metadata import PackageNotFoundError, version

from ._kernels import BACKEND
from .chem import check_validity, is_valid
from .fingerprint import fingerprint, tanimoto
from .gnn import GnnModels, UniformModels, load_checkpoint, pretrain, save_checkpoint
from .molgraph import BondType, MolGraph, SubstructureVocab, atom_vocab, canonical_key
from .oracle import enumerate_states, verify
from .properties import TargetDistConfig, builtin_scorer, log_target_density
from .proposal import ProposalConfig
from .sampler import KernelConfig, RunConfig, best_output, mh_step, run_mh_chain, run_population
from .smiles import SmilesError, parse_smiles, write_smiles

try:
    __version__ = version("molsampler")
except PackageNotFoundError:  # pragma: no cover - running from a source tree
    __version__ = "0.0.0"

__all__ = [
    "BACKEND", "BondType", "GnnModels", "KernelConfig", "MolGraph", "ProposalConfig", "RunConfig",
    "SmilesError", "SubstructureVocab", "TargetDistConfig", "UniformModels", "atom_vocab",
    "best_output", "builtin_scorer", "canonical_key", "check_validity", "enumerate_states",
    "fingerprint", "is_valid", "load_checkpoint", "log_target_density", "mh_step", "parse_smiles",
    "pretrain", "run_mh_chain", "run_population", "save_checkpoint", "tanimoto", "verify",
    "write_smiles", "__version__",
]

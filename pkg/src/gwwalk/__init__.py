"""Biased random walks on supercritical Galton-Watson trees conditioned to survive."""
from .pgf import BINARY, DerivedLaws, LawError, OffspringLaw, classify_regime, derive_laws, extinction_probability
from .tree import TreeHandle, branch_height, expand
from .walk import regenerations, run_walk

__all__ = [
    "BINARY", "DerivedLaws", "LawError", "OffspringLaw", "classify_regime", "derive_laws",
    "extinction_probability", "TreeHandle", "branch_height", "expand", "regenerations", "run_walk",
]
__version__ = "0.1.0"

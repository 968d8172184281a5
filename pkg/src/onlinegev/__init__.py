"""Online generalized eigenvalue problems: landscape analysis and the SGHA solver."""

from .errors import GevError
from .problem import GevProblem, ground_truth, whiten
from .landscape import Classification, Equilibrium
from .oracle import OracleSpec, next_sample, sampled_pair
from .sgha import Mode, SghaConfig, run

__all__ = [
    "GevError", "GevProblem", "ground_truth", "whiten",
    "Classification", "Equilibrium",
    "OracleSpec", "next_sample", "sampled_pair",
    "Mode", "SghaConfig", "run",
]
__version__ = "0.1.0"

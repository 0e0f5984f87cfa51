from .expr import Affine, as_affine, bmat, constant, hstack, vstack
from .lmi import bordered_basis, check_pd, inverse_pd, schur_lmi, slemma_pair
from .program import LMI, ConicProgram, VariableInfo
from .solver import (INFEASIBLE, MAX_ITERATIONS, NUMERICAL_FAILURE, OPTIMAL, UNBOUNDED, SolveResult,
                     SolverSettings, solve)

__all__ = [
    "Affine", "as_affine", "bmat", "constant", "hstack", "vstack",
    "bordered_basis", "check_pd", "inverse_pd", "schur_lmi", "slemma_pair",
    "LMI", "ConicProgram", "VariableInfo",
    "INFEASIBLE", "MAX_ITERATIONS", "NUMERICAL_FAILURE", "OPTIMAL", "UNBOUNDED",
    "SolveResult", "SolverSettings", "solve",
]

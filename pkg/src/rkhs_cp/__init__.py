"""Matrix-free PCG solvers for the RKHS mode-k subproblem of CP decomposition with missing entries."""
from .errors import (
    BreakdownError,
    DomainError,
    OracleScaleError,
    PreconditionerSingularError,
    PSDViolationError,
    SingularSystemError,
    SolverSuiteError,
    ValidationError,
)
from .kernel import KernelMatrix, KernelSpec, build_kernel
from .observations import FactorSet, ObservationSet, build_observation_set, sparse_mttkrp
from .operators import FlopCounter, ProblemInstance, make_problem
from .problemgen import GenSpec, generate, hand_instance, read_instance, write_instance
from .solvers import SolveConfig, SolveReport, pcg_inverse_free, pcg_standard, run_solver, solve_dense
from .tensor_index import Shape

__version__ = "0.1.0"

__all__ = [
    "BreakdownError",
    "DomainError",
    "FactorSet",
    "FlopCounter",
    "GenSpec",
    "KernelMatrix",
    "KernelSpec",
    "ObservationSet",
    "OracleScaleError",
    "PSDViolationError",
    "PreconditionerSingularError",
    "ProblemInstance",
    "Shape",
    "SingularSystemError",
    "SolveConfig",
    "SolveReport",
    "SolverSuiteError",
    "ValidationError",
    "build_kernel",
    "build_observation_set",
    "generate",
    "hand_instance",
    "make_problem",
    "pcg_inverse_free",
    "pcg_standard",
    "read_instance",
    "run_solver",
    "solve_dense",
    "sparse_mttkrp",
    "write_instance",
]

from .ldlt import Factorization, FactorizationError, factorize
from .lbfgs import LbfgsHessian
from .solver import (
    InteriorPointSolver,
    IpmOptions,
    IpmResult,
    SolveStats,
    correct_inertia,
    solve,
)

__all__ = [
    "Factorization",
    "FactorizationError",
    "factorize",
    "LbfgsHessian",
    "InteriorPointSolver",
    "IpmOptions",
    "IpmResult",
    "SolveStats",
    "correct_inertia",
    "solve",
]

"""BiCGStab-family solvers for multiple right-hand sides."""

from .engine import (
    Breakdown,
    BreakdownError,
    SolveReport,
    method_schedule,
    solve,
    verify_residual_identity,
)
from .precond import (
    IdentityPreconditioner,
    Preconditioner,
    SyntheticPreconditioner,
    make_preconditioner,
)
from .schedule import (
    PRECONDITIONED,
    UNPRECONDITIONED,
    Formulation,
    IterationSchedule,
    Method,
    Reduction,
)

__all__ = [
    "Breakdown",
    "BreakdownError",
    "Formulation",
    "IdentityPreconditioner",
    "IterationSchedule",
    "Method",
    "PRECONDITIONED",
    "Preconditioner",
    "Reduction",
    "SolveReport",
    "SyntheticPreconditioner",
    "UNPRECONDITIONED",
    "make_preconditioner",
    "method_schedule",
    "solve",
    "verify_residual_identity",
]

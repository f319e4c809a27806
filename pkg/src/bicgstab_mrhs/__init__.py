"""Multiple right-hand-side BiCGStab solvers with memory-traffic accounting."""

from .core import CsrMatrix, MultiVector, gen_poisson_5pt, gen_poisson_7pt, spmv, spmv_transpose
from .traffic import TrafficCounter

__version__ = "0.1.0"

__all__ = [
    "CsrMatrix",
    "MultiVector",
    "TrafficCounter",
    "gen_poisson_5pt",
    "gen_poisson_7pt",
    "spmv",
    "spmv_transpose",
]

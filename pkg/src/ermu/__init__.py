"""Desk-scale testbench for Gaussian equivalence of constrained ERM.

Builds random-feature, neural-tangent, and linear feature models, their
covariance-matched Gaussian twins, and runs coupled Monte Carlo campaigns
that compare training and test errors between the two.
"""

__version__ = "0.1.0"

from ermu.errors import (
    ErmuError,
    InvalidArgumentError,
    LinearSolveError,
    SolverDivergedError,
)

__all__ = [
    "ErmuError",
    "InvalidArgumentError",
    "LinearSolveError",
    "SolverDivergedError",
    "__version__",
]

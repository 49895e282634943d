"""Method of horizontal lines for coupled heat and moisture transfer in porous walls."""

from .bvp import (
    BoundarySpec,
    CollocationSolution,
    Mesh,
    OdeSystem,
    SolverOptions,
    adapt_mesh,
    estimate_residuals,
    evaluate_solution,
    solve_bvp,
)

__all__ = [
    "BoundarySpec", "CollocationSolution", "Mesh", "OdeSystem", "SolverOptions",
    "adapt_mesh", "estimate_residuals", "evaluate_solution", "solve_bvp",
]

__version__ = "0.1.0"

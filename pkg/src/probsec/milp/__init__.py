"""Mixed-integer linear programming kernel."""

from .lpformat import lp_name, parse_lp, read_solution, write_lp
from .model import (
    INF,
    LinExpr,
    MilpModel,
    MilpSolution,
    ModelError,
    SolverOptions,
    Status,
    Var,
    linearize_bin_times_free,
    linearize_bin_times_nonneg,
    quicksum,
)
from .solve import solve_lp, solve_milp

__all__ = [
    "INF", "LinExpr", "MilpModel", "MilpSolution", "ModelError", "SolverOptions", "Status", "Var",
    "linearize_bin_times_free", "linearize_bin_times_nonneg", "quicksum",
    "lp_name", "parse_lp", "read_solution", "write_lp", "solve_lp", "solve_milp",
]

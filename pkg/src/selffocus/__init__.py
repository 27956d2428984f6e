"""Least-energy positive and nodal solutions of -Δu + ε²u = Q(x)|u|^{p-2}u
with a self-focusing core Q = +1 on Ω and -1 outside."""

__version__ = "0.1.0"

from .domain import Annulus, Ball, Field, Grid, GridSpec, Union, build_grid, parse_shape
from .functional import ProblemSpec, energy, nehari_project, nodal_project
from .solver import SolveOptions, solve_limit, solve_nodal, solve_positive

__all__ = [
    "Annulus", "Ball", "Field", "Grid", "GridSpec", "ProblemSpec", "SolveOptions", "Union",
    "build_grid", "energy", "nehari_project", "nodal_project", "parse_shape",
    "solve_limit", "solve_nodal", "solve_positive", "__version__",
]

"""Numerical laboratory for Morrey-space regularity of higher-order elliptic systems."""
from .classifier import ProblemParams, classify, least_order_s0, low_order_holder
from .grid import Grid, GridFunction, Region, finite_difference
from .kernels import fundamental_matrix, fundamental_solution

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "GridFunction",
    "ProblemParams",
    "Region",
    "classify",
    "finite_difference",
    "fundamental_matrix",
    "fundamental_solution",
    "least_order_s0",
    "low_order_holder",
]

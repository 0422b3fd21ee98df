"""Adaptive HDG solver for convection-dominated convection-diffusion problems."""

from .adapt import AdaptParams, adaptive_loop, dorfler_mark
from .estimator import estimate, error_norms
from .hdg import assemble_global, solve_hdg
from .mesh import Mesh, build_structured_unit_square, conformity_check, nvb_refine
from .problems import (make_example1, make_example2, make_example3,
                       make_manufactured_poly, make_polynomial_problem)

__all__ = [
    "AdaptParams", "adaptive_loop", "dorfler_mark", "estimate", "error_norms",
    "assemble_global", "solve_hdg", "Mesh", "build_structured_unit_square",
    "conformity_check", "nvb_refine", "make_example1", "make_example2",
    "make_example3", "make_manufactured_poly", "make_polynomial_problem",
]

__version__ = "0.1.0"

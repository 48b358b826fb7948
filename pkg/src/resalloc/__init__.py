"""Singly-constrained separable convex resource allocation.

Two solvers for  min sum_i f_i(x_i)  s.t.  sum_i g_i(x_i) = b,  l <= x <= u:
a primal-dual interior point method whose Newton direction is computed in
closed form in O(n), and a Lagrangian breakpoint search. Five random
instance classes and a benchmark harness are included.
"""

from .breakpoint import BreakpointOptions, breakpoint_solve
from .classes import CLASSES, GeneratorSpec, generate
from .ipm import IpmOptions, ipm_solve
from .model import (
    CoordinateFunctionPair,
    PairList,
    SeparableProblem,
    Solution,
    check_kkt,
    evaluate,
    load_instance,
    reorient,
    save_instance,
    validate_assumptions,
)
from .results import SolveReport, Status

__all__ = [
    "BreakpointOptions",
    "CLASSES",
    "CoordinateFunctionPair",
    "GeneratorSpec",
    "IpmOptions",
    "PairList",
    "SeparableProblem",
    "Solution",
    "SolveReport",
    "Status",
    "breakpoint_solve",
    "check_kkt",
    "evaluate",
    "generate",
    "ipm_solve",
    "load_instance",
    "reorient",
    "save_instance",
    "validate_assumptions",
]

__version__ = "0.1.0"

"""Moment relaxations for polynomial optimal control.

Lower bounds on the optimal cost come from truncated moment sequences of
occupation measures; the dual multipliers give a polynomial subsolution of
the Hamilton-Jacobi-Bellman inequality, from which feedback laws are built.
"""

from .control import (
    FeedbackPolicy,
    Trajectory,
    ValueFunction,
    double_integrator_min_time,
    extract_control,
    gap,
    receding_horizon,
    simulate,
    upper_bound_certificate,
)
from .momentbasis import MomentVector, enumerate_basis
from .ocp import Horizon, InitialMeasure, OcpProblem, SemialgebraicSet
from .poly import Polynomial, VarSpace, parse
from .relax import RelaxationOrder, assemble, default_order, lower_bound
from .sdp import ConicProgram, ConicSolution, PSDBlock, SolverOptions, solve

__version__ = "0.1.0"

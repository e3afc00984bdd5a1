"""Conditional gradient solver for composite objectives f + g with cheap
linear minimization oracles, plus two PDE-constrained control instances.

The solver minimizes j(u) = f(u) + g(u) where f is smooth and g is convex
with an inexpensive linear minimization oracle (LMO).  Each iteration solves
the partially linearized subproblem, measures progress with a duality gap,
and backtracks along the segment to the oracle point.
"""

from gcg.core import (
    ArmijoParams,
    CompositeProblem,
    ControlField,
    IterateRecord,
    LineSearchError,
    OracleError,
    SolveResult,
    SolveStatus,
    SolverConfig,
    armijo_step,
    dual_gap,
    gcg_solve,
    pairing,
)

__all__ = [
    "ArmijoParams",
    "CompositeProblem",
    "ControlField",
    "IterateRecord",
    "LineSearchError",
    "OracleError",
    "SolveResult",
    "SolveStatus",
    "SolverConfig",
    "armijo_step",
    "dual_gap",
    "gcg_solve",
    "pairing",
]

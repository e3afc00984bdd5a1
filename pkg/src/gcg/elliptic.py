"""Poisson tracking control with an L1 penalty and box constraints.

Minimizes  f(u) + g(u)  over controls on the unit square (or interval) with

    f(u) = 0.5 * |K u - target|_2,mass**2,      K = inverse Dirichlet stencil,
    g(u) = beta * |u|_1,mass + indicator of {lower <= u <= upper},

where the target absorbs any fixed source term: target = y_d - K h.  The
gradient of f is the adjoint state p = K (K u - target); the LMO thresholds
p nodewise at +-beta, producing controls supported on {lower, 0, upper}.
Minimizers inherit that three-valued structure wherever |p| != beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from gcg.core import CompositeProblem, ControlField
from gcg.pde import (
    DiscreteOperator,
    Grid1D,
    Grid2D,
    SpatialGrid,
    assemble_laplacian,
    estimate_c_constant,
    l1_norm,
    solve_poisson,
)


@dataclass(eq=False)
class EllipticProblem:
    """One tracking instance: grid, operator, penalty weight, bounds, target."""

    grid: SpatialGrid
    operator: DiscreteOperator
    reg_beta: float
    lower: ControlField
    upper: ControlField
    target: ControlField

    def __post_init__(self):
        if self.reg_beta < 0.0:
            raise ValueError("penalty weight must be nonnegative")
        if np.any(self.lower.values > 0.0) or np.any(self.upper.values < 0.0):
            raise ValueError("bounds must satisfy lower <= 0 <= upper nodewise")
        n = self.grid.n_nodes
        if not (self.lower.size == self.upper.size == self.target.size == n):
            raise ValueError("bounds and target must live on the problem grid")

    @property
    def bound_scale(self) -> float:
        return max(
            1.0,
            float(np.max(np.abs(self.lower.values))),
            float(np.max(np.abs(self.upper.values))),
        )

    def zero_control(self) -> ControlField:
        return self.grid.zero_field()

    def f_and_grad(self, u: ControlField) -> tuple[float, ControlField]:
        """Tracking misfit and its gradient, the adjoint state p."""
        y = self.operator.solve(u.values)
        resid = y - self.target.values
        f_val = 0.5 * float(np.dot(u.mass, resid**2))
        p = self.operator.solve(resid)
        return f_val, u.with_values(p)

    def g_eval(self, u: ControlField) -> float:
        """beta-weighted l1 norm, infinite outside the box (with fp slack)."""
        tol = 1e-12 * self.bound_scale
        if np.any(u.values < self.lower.values - tol) or np.any(
            u.values > self.upper.values + tol
        ):
            return math.inf
        return self.reg_beta * l1_norm(u)

    def lmo(self, p: ControlField) -> ControlField:
        """Nodewise minimizer of p*v + beta*|v| over [lower, upper].

        v = lower where p >= beta, upper where p <= -beta, else 0; ties on
        |p| = beta resolve to the bound, matching the case analysis of the
        optimality system.
        """
        beta = self.reg_beta
        vals = np.where(
            p.values >= beta,
            self.lower.values,
            np.where(p.values <= -beta, self.upper.values, 0.0),
        )
        return p.with_values(vals)

    def dual_norm(self, u: ControlField) -> float:
        return l1_norm(u)

    def line_objective(
        self, u: ControlField, v: ControlField
    ) -> Callable[[float], float]:
        """Exact objective along the segment u + s (v - u).

        The smooth part is quadratic in s, so two solves (state at u and at
        the difference) give f exactly for every s; the l1 part is summed
        per probe.  Box feasibility holds on [0, 1] by convexity and is not
        rechecked here.
        """
        y_u = self.operator.solve(u.values)
        dy = self.operator.solve(v.values - u.values)
        resid = y_u - self.target.values
        mass = u.mass
        f0 = 0.5 * float(np.dot(mass, resid**2))
        f1 = float(np.dot(mass, resid * dy))
        f2 = float(np.dot(mass, dy**2))
        du = v.values - u.values
        beta = self.reg_beta

        def phi(s: float) -> float:
            g_val = beta * float(np.dot(mass, np.abs(u.values + s * du)))
            return f0 + s * f1 + 0.5 * s * s * f2 + g_val

        return phi

    def composite(self) -> CompositeProblem:
        return CompositeProblem(
            smooth_eval=self.f_and_grad,
            nonsmooth_eval=self.g_eval,
            lmo=self.lmo,
            dual_norm=self.dual_norm,
            line_objective=self.line_objective,
        )

    @cached_property
    def lipschitz_estimate(self) -> float:
        """Gradient Lipschitz bound c**2 from the l2-by-l1 operator scan."""
        c = estimate_c_constant(self.operator, self.grid.mass_weights())
        return c * c

    def sample_feasible(self, rng: np.random.Generator) -> ControlField:
        vals = rng.uniform(self.lower.values, self.upper.values)
        return self.lower.with_values(vals)


@dataclass(frozen=True)
class StructureReport:
    """Mass fractions describing how bang-bang-off a control is.

    three_value_fraction: nodes within tolerance of {lower, 0, upper}.
    case_match_fraction: nodes consistent with the adjoint-based case rule
    (at the lower bound where p > beta, zero where |p| < beta, at the upper
    bound where p < -beta, anywhere in the adjacent interval on the
    transition bands |p| = beta).
    """

    three_value_fraction: float
    case_match_fraction: float


def structure_report(
    prob: EllipticProblem, u: ControlField, p: ControlField, tol: float = 1e-6
) -> StructureReport:
    """Measure-weighted structure check of a control / adjoint pair."""
    atol = tol * prob.bound_scale
    vals, mass = u.values, u.mass
    lo, up = prob.lower.values, prob.upper.values
    total = float(mass.sum())

    dist3 = np.minimum(np.abs(vals - lo), np.minimum(np.abs(vals), np.abs(vals - up)))
    three = float(mass[dist3 <= atol].sum()) / total

    beta = prob.reg_beta
    pv = p.values
    ptol = tol * max(1.0, float(np.max(np.abs(pv))))
    at_lo = np.abs(vals - lo) <= atol
    at_up = np.abs(vals - up) <= atol
    at_zero = np.abs(vals) <= atol
    in_lo_band = (vals >= lo - atol) & (vals <= atol)
    in_up_band = (vals >= -atol) & (vals <= up + atol)
    ok = np.where(
        pv > beta + ptol,
        at_lo,
        np.where(
            pv < -beta - ptol,
            at_up,
            np.where(
                np.abs(pv) < beta - ptol,
                at_zero,
                np.where(pv > 0, in_lo_band, in_up_band),
            ),
        ),
    )
    case = float(mass[ok].sum()) / total
    return StructureReport(three_value_fraction=three, case_match_fraction=case)


def growth_measure(prob: EllipticProblem, p: ControlField, eps: float) -> float:
    """Mass of the near-threshold set { | |p| - beta | <= eps }."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    band = np.abs(np.abs(p.values) - prob.reg_beta) <= eps
    return float(p.mass[band].sum())


def _example_fields(name: str, grid: SpatialGrid):
    if not isinstance(grid, Grid2D):
        raise ValueError("the bundled examples are posed on the unit square")
    x1, x2 = grid.coords()
    if name == "stadler-ex1":
        lower = np.full(grid.n_nodes, -30.0)
        upper = np.full(grid.n_nodes, 30.0)
        y_d = np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2) * np.exp(2 * x1) / 6.0
        source = None
        beta = 0.001
    elif name == "stadler-ex3":
        lower = np.full(grid.n_nodes, -10.0)
        upper = np.where(x1 <= 0.25, 0.0, -5.0 + 20.0 * x1)
        y_d = np.sin(4 * np.pi * x1) * np.cos(8 * np.pi * x2) * np.exp(2 * x1)
        source = 10.0 * np.cos(8 * np.pi * x1) * np.sin(8 * np.pi * x2)
        beta = 0.002
    else:
        raise ValueError(f"unknown elliptic example {name!r}")
    return lower, upper, y_d, source, beta


def make_example(name: str, n: int) -> EllipticProblem:
    """Build a bundled benchmark instance at resolution n.

    stadler-ex1: bounds +-30, beta = 1e-3, smooth oscillatory target, no
    fixed source.  stadler-ex3: lower bound -10, upper bound 0 for x1 <= 1/4
    and -5 + 20 x1 beyond, beta = 2e-3, with a fixed source folded into the
    target as target = y_d - K h.
    """
    grid = Grid2D(n)
    op = assemble_laplacian(grid)
    lower, upper, y_d, source, beta = _example_fields(name, grid)
    target = y_d if source is None else y_d - op.solve(source)
    return EllipticProblem(
        grid=grid,
        operator=op,
        reg_beta=beta,
        lower=grid.field(lower),
        upper=grid.field(upper),
        target=grid.field(target),
    )


ELLIPTIC_EXAMPLES = {
    "stadler-ex1": "elliptic tracking, constant bounds +-30, three-valued optimal control",
    "stadler-ex3": "elliptic tracking, spatially varying upper bound and fixed source",
}

"""Finite difference grids, elliptic/parabolic solve kernels, weighted norms.

Spatial domains are the unit interval or unit square with homogeneous
Dirichlet boundary values.  Interior nodes sit at multiples of h = 1/(n+1);
the Laplacian is the standard 3-point (1D) or 5-point (2D) stencil divided
by h**2, and integrals use composite midpoint weights h (1D) or h**2 (2D).
Time stepping is implicit Euler on a uniform mesh of nt steps; the adjoint
stepper is the exact transpose of the forward map in the space-time inner
product, so discrete adjoint identities hold to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg, splu

from gcg.core import ControlField


@dataclass(frozen=True)
class Grid1D:
    """Interior nodes i*h, i = 1..n, of the unit interval, h = 1/(n+1)."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid needs at least one interior node")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def n_nodes(self) -> int:
        return self.n

    def mass_weights(self) -> np.ndarray:
        return np.full(self.n, self.h)

    def coords(self) -> tuple[np.ndarray]:
        return (self.h * np.arange(1, self.n + 1),)

    def field(self, values) -> ControlField:
        return ControlField(np.asarray(values, dtype=float), self.mass_weights(), self)

    def zero_field(self) -> ControlField:
        return self.field(np.zeros(self.n_nodes))


@dataclass(frozen=True)
class Grid2D:
    """Interior nodes of the unit square, n per direction, h = 1/(n+1).

    Nodes are flattened row-major with x1 varying fastest: node (iy, ix)
    maps to index iy*n + ix and sits at (x1, x2) = ((ix+1) h, (iy+1) h).
    """

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid needs at least one interior node")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def n_nodes(self) -> int:
        return self.n * self.n

    def mass_weights(self) -> np.ndarray:
        return np.full(self.n_nodes, self.h**2)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        axis = self.h * np.arange(1, self.n + 1)
        x2, x1 = np.meshgrid(axis, axis, indexing="ij")
        return x1.ravel(), x2.ravel()

    def field(self, values) -> ControlField:
        return ControlField(np.asarray(values, dtype=float), self.mass_weights(), self)

    def zero_field(self) -> ControlField:
        return self.field(np.zeros(self.n_nodes))


SpatialGrid = Union[Grid1D, Grid2D]


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform time mesh over a spatial grid; slice m lives at t = m*tau.

    Controls and states are stored on the nt right-endpoint time levels
    (implicit Euler evaluation points), flattened slice by slice, with
    space-time quadrature weight tau * (spatial weight) at every node.
    """

    space: SpatialGrid
    nt: int
    horizon: float = 1.0

    def __post_init__(self):
        if self.nt < 1:
            raise ValueError("need at least one time step")
        if self.horizon <= 0.0:
            raise ValueError("time horizon must be positive")

    @property
    def tau(self) -> float:
        return self.horizon / self.nt

    @property
    def n_nodes(self) -> int:
        return self.nt * self.space.n_nodes

    def times(self) -> np.ndarray:
        return self.tau * np.arange(1, self.nt + 1)

    def mass_weights(self) -> np.ndarray:
        return np.tile(self.tau * self.space.mass_weights(), self.nt)

    def as_slices(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float).reshape(self.nt, self.space.n_nodes)

    def field(self, values) -> ControlField:
        flat = np.asarray(values, dtype=float).ravel()
        return ControlField(flat, self.mass_weights(), self)

    def zero_field(self) -> ControlField:
        return self.field(np.zeros(self.n_nodes))


class DiscreteOperator:
    """Sparse SPD operator with a cached direct factorization.

    Solves go through an LU factorization computed once per operator; if the
    factorization cannot be built, conjugate gradients with relative
    tolerance 1e-12 takes over.  Every solve is checked a posteriori against
    the same relative residual bound.
    """

    def __init__(self, matrix):
        matrix = sparse.csc_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError("operator matrix must be square")
        self.matrix = matrix
        self._factor = None
        self._use_cg = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def _solve_raw(self, rhs: np.ndarray) -> np.ndarray:
        if not self._use_cg and self._factor is None:
            try:
                self._factor = splu(self.matrix)
            except RuntimeError:
                self._use_cg = True
        if self._use_cg:
            if rhs.ndim == 1:
                cols = [rhs]
            else:
                cols = [rhs[:, j] for j in range(rhs.shape[1])]
            outs = []
            for col in cols:
                out, info = cg(self.matrix, col, rtol=1e-12, atol=0.0)
                if info != 0:
                    raise RuntimeError("iterative fallback solve did not converge")
                outs.append(out)
            return outs[0] if rhs.ndim == 1 else np.stack(outs, axis=1)
        return self._factor.solve(rhs)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve op @ y = rhs to relative residual <= 1e-12."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.size:
            raise ValueError("right hand side has the wrong length")
        rhs_norm = np.linalg.norm(rhs, axis=0)
        if np.all(rhs_norm == 0.0):
            return np.zeros_like(rhs)
        y = self._solve_raw(rhs)
        resid = np.linalg.norm(self.matrix @ y - rhs, axis=0)
        if np.any(resid > 1e-12 * np.maximum(rhs_norm, 1e-300)):
            raise RuntimeError("linear solve failed the residual check")
        return y


def _stiffness_1d(n: int, h: float) -> sparse.csr_matrix:
    main = np.full(n, 2.0)
    off = np.full(n - 1, -1.0)
    return sparse.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def assemble_laplacian(grid: SpatialGrid) -> DiscreteOperator:
    """Dirichlet Laplacian stencil: 3-point in 1D, 5-point in 2D.

    Diagonal entries are 2/h**2 (1D) or 4/h**2 (2D), neighbor entries
    -1/h**2; boundary nodes are eliminated.  The matrix is symmetric
    positive definite with eigenvalues
    (4/h**2) * sum_d sin(i_d pi h / 2)**2 over the active directions.
    """
    if isinstance(grid, Grid1D):
        return DiscreteOperator(_stiffness_1d(grid.n, grid.h))
    if isinstance(grid, Grid2D):
        t = _stiffness_1d(grid.n, grid.h)
        eye = sparse.identity(grid.n, format="csr")
        return DiscreteOperator(sparse.kron(eye, t) + sparse.kron(t, eye))
    raise TypeError(f"unsupported grid type {type(grid).__name__}")


def smallest_laplacian_eigenvalue(grid: SpatialGrid) -> float:
    """Closed-form smallest eigenvalue of the assembled Dirichlet stencil."""
    h = grid.h
    base = (4.0 / h**2) * math.sin(math.pi * h / 2.0) ** 2
    if isinstance(grid, Grid1D):
        return base
    if isinstance(grid, Grid2D):
        return 2.0 * base
    raise TypeError(f"unsupported grid type {type(grid).__name__}")


def solve_poisson(op: DiscreteOperator, rhs: ControlField) -> ControlField:
    """Solve op @ y = rhs nodewise; mass weights and grid tag carry over."""
    if rhs.size != op.size:
        raise ValueError("rhs length does not match the operator")
    return rhs.with_values(op.solve(rhs.values))


class HeatOperator:
    """Implicit Euler stepping for d/dt y + a * (Laplacian stencil) y = u.

    Forward:  (I + tau a A) y_m = y_{m-1} + tau u_m,  y_0 = 0, m = 1..nt.
    Adjoint:  (I + tau a A) p_m = p_{m+1} + tau w_m,  p_{nt+1} = 0, backward.
    The adjoint is the exact transpose of the forward map with respect to
    the space-time inner product sum_m tau (x_m, z_m)_h.
    """

    def __init__(self, grid: SpaceTimeGrid, conductivity: float):
        if conductivity <= 0.0:
            raise ValueError("conductivity must be positive")
        self.grid = grid
        self.conductivity = conductivity
        a_matrix = assemble_laplacian(grid.space).matrix
        eye = sparse.identity(a_matrix.shape[0], format="csc")
        self.step_op = DiscreteOperator(eye + grid.tau * conductivity * a_matrix)

    def forward(self, u_slices: np.ndarray) -> np.ndarray:
        tau = self.grid.tau
        y = np.empty_like(u_slices)
        state = np.zeros(u_slices.shape[1])
        for m in range(u_slices.shape[0]):
            state = self.step_op.solve(state + tau * u_slices[m])
            y[m] = state
        return y

    def adjoint(self, w_slices: np.ndarray) -> np.ndarray:
        tau = self.grid.tau
        p = np.empty_like(w_slices)
        state = np.zeros(w_slices.shape[1])
        for m in range(w_slices.shape[0] - 1, -1, -1):
            state = self.step_op.solve(state + tau * w_slices[m])
            p[m] = state
        return p


@lru_cache(maxsize=8)
def _heat_operator(grid: SpaceTimeGrid, conductivity: float) -> HeatOperator:
    return HeatOperator(grid, conductivity)


def heat_forward(u: ControlField, grid: SpaceTimeGrid, conductivity: float) -> ControlField:
    """State y of the implicit Euler heat stepper driven by u, zero start."""
    op = _heat_operator(grid, conductivity)
    return u.with_values(op.forward(grid.as_slices(u.values)).ravel())


def heat_adjoint(w: ControlField, grid: SpaceTimeGrid, conductivity: float) -> ControlField:
    """Adjoint state: transpose of heat_forward applied to w."""
    op = _heat_operator(grid, conductivity)
    return w.with_values(op.adjoint(grid.as_slices(w.values)).ravel())


def l1_norm(u: ControlField) -> float:
    """Mass-weighted l1 norm sum_i mass_i |u_i|."""
    return float(np.dot(u.mass, np.abs(u.values)))


def l2_norm(u: ControlField) -> float:
    """Mass-weighted l2 norm sqrt(sum_i mass_i u_i**2)."""
    return math.sqrt(float(np.dot(u.mass, u.values**2)))


def slice_l2_norms(u: ControlField) -> np.ndarray:
    """Spatial l2 norm of every time slice of a space-time field."""
    grid = u.meta
    if not isinstance(grid, SpaceTimeGrid):
        raise ValueError("slice norms need a field on a SpaceTimeGrid")
    slices = grid.as_slices(u.values)
    return np.sqrt(slices**2 @ grid.space.mass_weights())

def group_l1_time(u: ControlField) -> float:
    """Time integral of the spatial l2 norm: sum_m tau * |u(t_m)|_2."""
    grid = u.meta
    if not isinstance(grid, SpaceTimeGrid):
        raise ValueError("group norm needs a field on a SpaceTimeGrid")
    return float(grid.tau * slice_l2_norms(u).sum())


def estimate_c_constant(op: DiscreteOperator, mass: np.ndarray, chunk: int = 256) -> float:
    """Largest l2 response of op**-1 over unit-l1 single-node inputs.

    Scans the columns of the inverse: c = max_j |K e_j|_2,mass / mass_j,
    which bounds |K u|_2 <= c |u|_1 for every u by convexity of the l1 ball.
    """
    mass = np.asarray(mass, dtype=float)
    if mass.shape != (op.size,):
        raise ValueError("mass weights do not match the operator size")
    best = 0.0
    n = op.size
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = np.zeros((n, stop - start))
        block[np.arange(start, stop), np.arange(stop - start)] = 1.0
        cols = op.solve(block)
        col_norms = np.sqrt(mass @ cols**2)
        best = max(best, float(np.max(col_norms / mass[start:stop])))
    return best


def heat_c_constant(grid: SpaceTimeGrid, conductivity: float) -> float:
    """Largest space-time l2 response over unit time-slice impulses.

    An impulse on one time slice with unit L1-in-time/L2-in-space norm
    excites the slowest stencil mode the hardest, giving
    c**2 = tau * sum_{l=1..nt} b**(2l) with b = 1/(1 + tau a mu_min).
    This bounds |S u|_L2 <= c |u| in the slicewise-l1 norm by convexity.
    """
    mu = smallest_laplacian_eigenvalue(grid.space)
    b = 1.0 / (1.0 + grid.tau * conductivity * mu)
    r = b * b
    total = r * (1.0 - r**grid.nt) / (1.0 - r)
    return math.sqrt(grid.tau * total)


def write_field(path, u: ControlField) -> None:
    """Write a field as a text dump: header line, then one value per line.

    Spatial fields get the header "nx ny h" (ny = 1 in 1D); space-time
    fields get "nx ny nt h tau".  Values are printed row-major with 17
    significant digits, enough to round-trip float64 exactly.
    """
    meta = u.meta
    lines = []
    if isinstance(meta, SpaceTimeGrid):
        space = meta.space
        nx = space.n
        ny = space.n if isinstance(space, Grid2D) else 1
        lines.append(f"{nx} {ny} {meta.nt} {space.h:.17g} {meta.tau:.17g}")
    elif isinstance(meta, Grid2D):
        lines.append(f"{meta.n} {meta.n} {meta.h:.17g}")
    elif isinstance(meta, Grid1D):
        lines.append(f"{meta.n} 1 {meta.h:.17g}")
    else:
        raise ValueError("field has no grid descriptor to write a header from")
    lines.extend(f"{x:.17g}" for x in u.values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path) -> ControlField:
    """Read a field written by write_field, reconstructing its grid."""
    with open(path) as fh:
        tokens = fh.readline().split()
        values = np.array([float(line) for line in fh if line.strip()])
    if len(tokens) == 3:
        nx, ny = int(tokens[0]), int(tokens[1])
        grid: Union[SpatialGrid, SpaceTimeGrid]
        grid = Grid1D(nx) if ny == 1 else Grid2D(nx)
        if ny not in (1, nx):
            raise ValueError("only square 2D grids are supported")
    elif len(tokens) == 5:
        nx, ny, nt = int(tokens[0]), int(tokens[1]), int(tokens[2])
        space = Grid1D(nx) if ny == 1 else Grid2D(nx)
        if ny not in (1, nx):
            raise ValueError("only square 2D grids are supported")
        tau = float(tokens[4])
        grid = SpaceTimeGrid(space, nt, horizon=nt * tau)
    else:
        raise ValueError("unrecognized field header")
    header_h = float(tokens[3 if len(tokens) == 5 else 2])
    space_grid = grid.space if isinstance(grid, SpaceTimeGrid) else grid
    if abs(space_grid.h - header_h) > 1e-12 * max(1.0, header_h):
        raise ValueError("header h is inconsistent with the node count")
    if values.size != grid.n_nodes:
        raise ValueError("value count does not match the header")
    return grid.field(values)

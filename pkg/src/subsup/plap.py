"""Scalar p-Laplace Dirichlet solver.

-Delta_p u = g is solved by minimizing the discrete energy

    J(u) = (1/p) * sum_c W_c |s_c|^p - <load, u>,

where s_c is the slope of the P1 field on cell c and W_c the cell volume.
Newton runs on the regularized density (s^2 + eps^2)^(p/2) / p with
backtracking line search, and eps is shrunk geometrically until the
unregularized gradient meets the tolerance.

Loads: a :class:`~subsup.domain.Field` right-hand side is lumped
(load_j = g_j * mass_j); a :class:`SingularRhs` is integrated exactly against
the hat functions with the singular quadrature of the domain module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.linalg import solveh_banded

from .domain import Field, Grid, hat_moments

logger = logging.getLogger(__name__)

STAGE_MAX_ITER = 100


class NonConvergence(RuntimeError):
    """Newton ran out of budget; carries the last iterate and its residual."""

    def __init__(self, message: str, field: Field, residual: float, iterations: int):
        super().__init__(message)
        self.field = field
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SingularRhs:
    """g(x) = scale * (constant + d(x)^mu) off the layer, scale * layer_value in it.

    The layer is {d < delta}; cells are assigned to it by their midpoint, so
    ``delta`` should be a nodal distance value (see ``domain.snap_to_node``).
    ``mu=None`` drops the d^mu term.  ``d^0`` is 1 everywhere.
    """

    constant: float = 0.0
    mu: float | None = None
    layer_value: float | None = None
    delta: float | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.mu is not None and not self.mu > -1.0:
            raise ValueError(f"singular rhs needs mu > -1, got {self.mu}")
        if (self.layer_value is None) != (self.delta is None):
            raise ValueError("layer_value and delta must be given together")
        if self.constant < 0:
            raise ValueError("constant part must be nonnegative")

    def scaled(self, t: float) -> SingularRhs:
        return replace(self, scale=self.scale * t)

    def _d_term(self, d):
        if self.mu is None:
            return np.zeros_like(d)
        if self.mu == 0.0:
            return np.ones_like(d)
        with np.errstate(divide="ignore"):
            return d**self.mu

    def layer_cells(self, grid: Grid) -> np.ndarray:
        if self.delta is None:
            return np.zeros(grid.n_cells, dtype=bool)
        return grid.distance(grid.midpoints) < self.delta

    def layer_nodes(self, grid: Grid) -> np.ndarray:
        if self.delta is None:
            return np.zeros(grid.n_nodes, dtype=bool)
        return grid.distance(grid.nodes) < self.delta

    def nodal(self, grid: Grid) -> np.ndarray:
        """Pointwise values at nodes (infinite at the boundary when mu < 0)."""
        d = grid.distance(grid.nodes)
        g = self.constant + self._d_term(d)
        if self.delta is not None:
            g = np.where(self.layer_nodes(grid), self.layer_value, g)
        return self.scale * g

    def _cell_moments(self, grid: Grid) -> np.ndarray:
        m = self.constant * hat_moments(grid, None)
        if self.mu is not None:
            m = m + hat_moments(grid, None if self.mu == 0.0 else self.mu)
        if self.delta is not None:
            lay = self.layer_cells(grid)
            m = np.where(lay[:, None], self.layer_value * hat_moments(grid, None), m)
        return self.scale * m

    def load(self, grid: Grid) -> np.ndarray:
        return _gather(grid, self._cell_moments(grid))

    def l1_norm(self, grid: Grid) -> float:
        off = self.constant * grid.cell_volumes
        if self.mu is not None:
            off = off + hat_moments(grid, None if self.mu == 0.0 else self.mu).sum(1)
        if self.delta is not None:
            lay = self.layer_cells(grid)
            off = np.where(lay, abs(self.layer_value) * grid.cell_volumes, off)
        return float(abs(self.scale) * off.sum())


Rhs = Field | SingularRhs


def _gather(grid: Grid, mom: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.n_nodes)
    out[:-1] += mom[:, 0]
    out[1:] += mom[:, 1]
    return out


def load_vector(grid: Grid, rhs: Rhs) -> np.ndarray:
    """Nodal load <g, phi_j> for every node (Dirichlet nodes included)."""
    if isinstance(rhs, SingularRhs):
        return rhs.load(grid)
    if rhs.grid is not grid:
        raise ValueError("rhs field lives on a different grid")
    return rhs.values * grid.hat_masses


def rhs_l1_norm(grid: Grid, rhs: Rhs) -> float:
    if isinstance(rhs, SingularRhs):
        return rhs.l1_norm(grid)
    return float(np.sum(np.abs(rhs.values) * grid.hat_masses))


@dataclass(frozen=True)
class PlapProblem:
    grid: Grid
    p: float
    rhs: Rhs
    regularization_eps: float = 1e-2
    tol: float | None = None
    max_newton_iter: int = 400

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.grid.is_radial and not self.p < self.grid.kind.N:
            raise ValueError(f"radial problems need p < N, got p={self.p}, N={self.grid.kind.N}")
        if not self.regularization_eps > 0:
            raise ValueError("regularization_eps must be positive")
        if self.tol is None:
            object.__setattr__(self, "tol", 1e-10)
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def with_rhs(self, rhs: Rhs) -> PlapProblem:
        return replace(self, rhs=rhs)


class PlapSolution(NamedTuple):
    u: Field
    iterations: int
    final_gradient_norm: float


def _slopes(grid: Grid, u: np.ndarray) -> np.ndarray:
    return np.diff(u) / grid.widths


def _flux(s, p, eps):
    if eps == 0.0:
        return np.sign(s) * np.abs(s) ** (p - 1) if p != 2 else s
    return (s * s + eps * eps) ** ((p - 2) / 2) * s


def _energy(grid, p, eps, u, load):
    s = _slopes(grid, u)
    dens = (s * s + eps * eps) ** (p / 2) if eps else np.abs(s) ** p
    return float(np.sum(grid.cell_volumes * dens) / p - load @ u)


def _grad(grid, p, eps, u, load):
    """Energy gradient at every node (boundary entries included)."""
    q = grid.cell_volumes * _flux(_slopes(grid, u), p, eps) / grid.widths
    g = -load.copy()
    g[:-1] -= q
    g[1:] += q
    return g


def _newton_step(grid, p, eps, u, g_free, free):
    h = grid.widths
    s = _slopes(grid, u)
    if p == 2.0:
        curv = np.ones_like(s)
    elif eps > 0.0:
        r2 = s * s + eps * eps
        curv = r2 ** ((p - 4) / 2) * ((p - 1) * s * s + eps * eps)
    else:
        curv = (p - 1) * np.maximum(np.abs(s), 1e-150) ** (p - 2)
    k = grid.cell_volumes * curv / h**2
    diag = np.zeros(grid.n_nodes)
    diag[:-1] += k
    diag[1:] += k
    off = -k  # coupling between node c and c+1
    d = diag[free]
    # free indices are contiguous: interval 1..n-1, radial 0..n-1
    o = off[free[:-1]]
    ab = np.zeros((2, d.size))
    ab[1] = d
    ab[0, 1:] = o
    return solveh_banded(ab, -g_free, check_finite=False)


def energy(problem: PlapProblem, u: Field) -> float:
    """Unregularized discrete energy (1/p)||grad u||_p^p - int g u."""
    load = load_vector(problem.grid, problem.rhs)
    return _energy(problem.grid, problem.p, 0.0, u.values, load)


def gradient_residual(problem: PlapProblem, u: Field) -> np.ndarray:
    """Unregularized energy gradient restricted to the free nodes."""
    load = load_vector(problem.grid, problem.rhs)
    return _grad(problem.grid, problem.p, 0.0, u.values, load)[problem.grid.free]


def weak_residual(problem: PlapProblem, u: Field) -> float:
    """max_j |int |u'|^(p-2) u' phi_j' - int g phi_j| / (1 + ||g||_1)."""
    r = gradient_residual(problem, u)
    return float(np.max(np.abs(r)) / (1.0 + rhs_l1_norm(problem.grid, problem.rhs)))


def _linear_solve(grid, load, free):
    u = np.zeros(grid.n_nodes)
    u[free] = _newton_step(grid, 2.0, 0.0, u, -load[free], free)
    return u


def _best_scaling(grid, p, v, load):
    """Minimizer t of J(t v) = t^p A / p - t B (homogeneity of the energy)."""
    A = float(np.sum(grid.cell_volumes * np.abs(_slopes(grid, v)) ** p))
    B = float(load @ v)
    if A <= 0.0 or B <= 0.0:
        return v
    return (B / A) ** (1.0 / (p - 1.0)) * v


def _roundoff_floor(grid, p, u, load, free):
    """Smallest residual resolvable in double precision at the iterate u.

    For p < 2 the flux |s|^(p-2) s has unbounded derivative at s = 0, so one
    ulp of nodal change moves the residual by a lot when a slope is tiny.
    """
    h, W = grid.widths, grid.cell_volumes
    s = np.abs(_slopes(grid, u))
    ds = (np.spacing(np.abs(u[:-1])) + np.spacing(np.abs(u[1:]))) / h
    dq = (_flux(s + ds, p, 0.0) - _flux(np.maximum(s - ds, 0.0), p, 0.0)) * W / h
    q = np.abs(_flux(s, p, 0.0)) * W / h
    per = np.zeros(grid.n_nodes)
    per[:-1] += dq + 4 * np.finfo(float).eps * q
    per[1:] += dq + 4 * np.finfo(float).eps * q
    per += 4 * np.finfo(float).eps * np.abs(load)
    return float(np.max(per[free]))


def _line_search(grid, p, eps, u, du, g, load, free):
    """Backtracking on the energy; on the gradient norm once energy is roundoff.

    Returns (step length, trial energy) or (0.0, None) when no step is found.
    """
    E0 = _energy(grid, p, eps, u, load)
    slope = float(g @ du[free])
    noise = 1e-13 * (abs(E0) + abs(float(load @ u)))
    g2 = float(g @ g)
    alpha = 1.0
    while alpha > 1e-12:
        trial = u + alpha * du
        E1 = _energy(grid, p, eps, trial, load)
        if E1 <= E0 + 1e-4 * alpha * slope:
            return alpha, E1
        if abs(E1 - E0) <= noise:
            g1 = _grad(grid, p, eps, trial, load)[free]
            if float(g1 @ g1) < (1.0 - 1e-4 * alpha) * g2:
                return alpha, E1
        alpha *= 0.5
    return 0.0, None


def _minimize(grid, p, load, free, u, eps0, tol, budget, trace=None):
    """Newton with ε-continuation.  Returns (u, iterations, residual)."""
    iters = 0
    scale = max(np.max(np.abs(_slopes(grid, u))), np.finfo(float).tiny)
    eps = 0.0 if p == 2 else eps0 * scale
    res = np.max(np.abs(_grad(grid, p, 0.0, u, load)[free]))
    while res > tol and iters < budget:
        best, slow, stage_iters = np.inf, 0, 0
        while iters < budget and stage_iters < STAGE_MAX_ITER:
            g = _grad(grid, p, eps, u, load)[free]
            gnorm = np.max(np.abs(g))
            if gnorm <= 0.1 * tol:
                break
            # stagnation counts only once the gradient is near its roundoff floor
            slow = slow + 1 if gnorm > 0.5 * best else 0
            best = min(best, gnorm)
            if slow >= 3 and gnorm <= 1e3 * _roundoff_floor(grid, p, u, load, free):
                break
            du = np.zeros_like(u)
            try:
                du[free] = _newton_step(grid, p, eps, u, g, free)
            except np.linalg.LinAlgError:
                break
            alpha, E1 = _line_search(grid, p, eps, u, du, g, load, free)
            iters += 1
            stage_iters += 1
            if alpha == 0.0:
                break
            u = u + alpha * du
            if trace is not None:
                trace.append(E1)
        res = np.max(np.abs(_grad(grid, p, 0.0, u, load)[free]))
        if eps == 0.0:
            break
        eps = eps / 10.0 if eps > 1e-14 * scale else 0.0
    return u, iters, res


def solve(problem: PlapProblem, initial: Field | None = None, trace: list | None = None) -> PlapSolution:
    """Minimize the discrete energy of ``problem``.

    Parameters
    ----------
    problem : PlapProblem
    initial : Field, optional
        Warm start; defaults to the optimally scaled p = 2 solution.
    trace : list, optional
        Receives the regularized energy after every accepted Newton step.

    Raises
    ------
    NonConvergence
        If the optimality residual is still above ``problem.tol`` after
        ``max_newton_iter`` Newton steps.
    """
    grid, p = problem.grid, problem.p
    free = grid.free
    load = load_vector(grid, problem.rhs)
    load[grid.dirichlet] = 0.0
    if not np.any(load[free]):
        return PlapSolution(Field(grid, np.zeros(grid.n_nodes)), 0, 0.0)

    tol = problem.tol
    budget = problem.max_newton_iter
    iters = 0
    if initial is not None:
        u = np.array(initial.values, dtype=float)
        u[grid.dirichlet] = 0.0
    else:
        u = _linear_solve(grid, load, free)
        if p != 2.0:
            # continuation in p from the linear solution
            n_steps = int(np.ceil(abs(p - 2.0))) if abs(p - 2.0) > 1.0 else 1
            for q in np.linspace(2.0, p, n_steps + 1)[1:-1]:
                u = _best_scaling(grid, q, u, load)
                q_tol = 1e-6 * (np.max(np.abs(load)) + tol)
                u, k, _ = _minimize(grid, q, load, free, u, problem.regularization_eps, q_tol, budget - iters)
                iters += k
            u = _best_scaling(grid, p, u, load)

    u, k, res = _minimize(
        grid, p, load, free, u, problem.regularization_eps, tol, budget - iters, trace
    )
    iters += k
    u, res, k = _polish(grid, p, load, free, u, res)
    iters += k
    u[grid.dirichlet] = 0.0
    field = Field(grid, u)
    floor = _roundoff_floor(grid, p, u, load, free)
    # a roundoff-limited residual is accepted only within 1000x of tol
    if not res <= max(tol, min(4.0 * floor, 1e3 * tol)):
        raise NonConvergence(
            f"p-Laplace solve did not reach tol={tol:g} (residual {res:.3e}) "
            f"in {iters} Newton steps; refine the mesh or loosen the tolerance",
            field,
            float(res),
            iters,
        )
    logger.debug("plap solve p=%g: %d Newton steps, residual %.3e", p, iters, res)
    return PlapSolution(field, iters, float(res))


def _polish(grid, p, load, free, u, res):
    """Undamped exact-Hessian steps that clean up the nodal values.

    The volume-weighted residual can sit at roundoff while values where the
    weight is tiny (the centre of a ball) are still off, so a step is also
    accepted when it leaves the residual within the roundoff floor.  Stops
    once the Newton step is negligible relative to u.
    """
    k = 0
    if p != 2.0 and np.any(_slopes(grid, u) == 0.0):
        return u, res, k
    for _ in range(3):
        g = _grad(grid, p, 0.0, u, load)[free]
        du = np.zeros_like(u)
        try:
            du[free] = _newton_step(grid, p, 0.0, u, g, free)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(du)):
            break
        trial = u + du
        r1 = np.max(np.abs(_grad(grid, p, 0.0, trial, load)[free]))
        if not r1 <= max(res, 4.0 * _roundoff_floor(grid, p, trial, load, free)):
            break
        u, res = trial, r1
        k += 1
        if np.max(np.abs(du)) <= 4 * np.finfo(float).eps * np.max(np.abs(u)):
            break
    return u, res, k

"""Driven-cavity incompressible Navier-Stokes solver checked by extrapolation.

The base scheme is a projection method on a staggered (MAC) grid over the
unit square: u-velocities live on vertical cell faces, v-velocities on
horizontal faces, pressure at cell centers. Each step applies, in order,

1. explicit centered-difference treatment of the nonlinear terms,
2. implicit viscous solves (one Helmholtz system per velocity component),
3. a pressure Poisson solve from the divergence of the tentative velocity,
4. a pressure-gradient correction that restores a discretely
   divergence-free field.

Wall values enter through ghost cells; the moving lid drives the tangential
velocity along the top. The viscous and pressure systems have constant
coefficients and are factorized once per problem setup, so per-step solves
are pure triangular backsubstitutions and iterative-solver tolerances never
contaminate the difference sequence. The pressure system's constant null
space is pinned by fixing the first cell's pressure to zero.

The auxiliary is order-1 extrapolation of the two newest base velocity
fields; pressure is not part of the check. Differences reduce over the two
velocity components by taking the larger per-field norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import (
    ConfigError,
    NonFiniteValueError,
    SchemePair,
    StepOutput,
    TimeGrid,
    state_is_finite,
)
from .ode_pairs import extrapolation_aux

__all__ = [
    "NsProblem",
    "NsFields",
    "projection_step",
    "ns_pair_step",
    "divergence",
    "NsPair",
]


@dataclass(frozen=True)
class NsProblem:
    """Cavity-flow setup on [0, 1]^2 with n_cells cells per direction."""

    reynolds: float
    n_cells: int = 40
    dt: float = 1 / 100
    t_end: float = 2.0
    lid_velocity: float = 1.0

    def __post_init__(self):
        if self.reynolds <= 0.0:
            raise ConfigError(f"Reynolds number must be positive, got {self.reynolds}")
        if self.n_cells < 2:
            raise ConfigError(f"need at least 2 cells per direction, got {self.n_cells}")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("t_end must be a multiple of dt")
        if abs(self.lid_velocity) * self.dt / self.h > 1.0:
            raise ConfigError("advective CFL above 1; reduce dt or lid velocity")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def n_steps(self) -> int:
        return round(self.t_end / self.dt)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.dt, self.n_steps)


@dataclass
class NsFields:
    """Velocity components on the staggered grid plus cell-center pressure.
    u has shape (n-1, n), v has shape (n, n-1), p has shape (n, n); the first
    axis is x."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    @classmethod
    def at_rest(cls, problem: NsProblem) -> "NsFields":
        n = problem.n_cells
        return cls(np.zeros((n - 1, n)), np.zeros((n, n - 1)), np.zeros((n, n)))

    def copy(self) -> "NsFields":
        return NsFields(self.u.copy(), self.v.copy(), self.p.copy())


def _second_diff(n: int, h: float, end_coeff: float) -> sp.csr_matrix:
    """1-D negative second difference (positive definite sign convention).
    end_coeff is the boundary diagonal entry: 1 for a zero-flux end, 2 when
    the boundary value sits on the next node, 3 when it sits half a cell
    beyond (ghost elimination)."""
    main = np.full(n, 2.0)
    main[0] = main[-1] = float(end_coeff)
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], (-1, 0, 1), format="csr") / h**2


class _NsWorkspace:
    def __init__(self, problem: NsProblem):
        n = problem.n_cells
        h = problem.h
        dt = problem.dt
        nu = dt / problem.reynolds

        eye_u_x = sp.identity(n - 1, format="csr")
        eye_n = sp.identity(n, format="csr")
        eye_v_y = sp.identity(n - 1, format="csr")

        # u: boundary values on-node in x (walls), half-cell ghosts in y.
        lap_u = sp.kron(eye_n, _second_diff(n - 1, h, 2.0)) + sp.kron(
            _second_diff(n, h, 3.0), eye_u_x
        )
        self.solve_u = splu((sp.identity((n - 1) * n) + nu * lap_u).tocsc()).solve

        # v: half-cell ghosts in x, on-node in y.
        lap_v = sp.kron(eye_v_y, _second_diff(n, h, 3.0)) + sp.kron(
            _second_diff(n - 1, h, 2.0), eye_n
        )
        self.solve_v = splu((sp.identity(n * (n - 1)) + nu * lap_v).tocsc()).solve

        # Pressure: zero-flux ends both directions; constant null space pinned
        # by dedicating the first row/column to p[0, 0] = 0.
        lap_p = (
            sp.kron(eye_n, _second_diff(n, h, 1.0))
            + sp.kron(_second_diff(n, h, 1.0), eye_n)
        ).tolil()
        lap_p[0, :] = 0.0
        lap_p[:, 0] = 0.0
        lap_p[0, 0] = 1.0
        self.solve_p = splu(lap_p.tocsc()).solve

        # Lid contribution to the u Helmholtz right-hand side (top ghosts).
        bc = np.zeros((n - 1, n))
        bc[:, -1] = 2.0 * problem.lid_velocity / h**2
        self.visc_bc_u = nu * bc


@lru_cache(maxsize=8)
def _workspace(problem: NsProblem) -> _NsWorkspace:
    return _NsWorkspace(problem)


def _advect(problem: NsProblem, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Explicit centered-difference step for (u^2)_x + (uv)_y and the v
    analogue, with wall values and mirror ghosts folded in."""
    n = problem.n_cells
    h = problem.h
    dt = problem.dt
    lid = problem.lid_velocity

    zx = np.zeros((1, n))
    ue = np.vstack([zx, u, zx])                                   # walls at x = 0, 1
    ue = np.hstack([-ue[:, :1], ue, 2.0 * lid - ue[:, -1:]])      # ghosts below/above
    zy = np.zeros((n, 1))
    ve = np.hstack([zy, v, zy])                                   # walls at y = 0, 1
    ve = np.vstack([-ve[:1, :], ve, -ve[-1:, :]])                 # ghosts left/right

    ua = 0.5 * (ue[:, 1:] + ue[:, :-1])                           # corners
    va = 0.5 * (ve[1:, :] + ve[:-1, :])
    uv = ua * va
    uvx = np.diff(uv, axis=0) / h
    uvy = np.diff(uv, axis=1) / h

    ucc = 0.5 * (ue[1:, 1:-1] + ue[:-1, 1:-1])                    # cell centers
    vcc = 0.5 * (ve[1:-1, 1:] + ve[1:-1, :-1])
    u2x = np.diff(ucc * ucc, axis=0) / h
    v2y = np.diff(vcc * vcc, axis=1) / h

    u_star = u - dt * (u2x + uvy[1:-1, :])
    v_star = v - dt * (v2y + uvx[:, 1:-1])
    return u_star, v_star


def divergence(problem: NsProblem, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Discrete cell-center divergence with the zero wall-normal fluxes."""
    n = problem.n_cells
    h = problem.h
    zx = np.zeros((1, n))
    zy = np.zeros((n, 1))
    ux = np.diff(np.vstack([zx, u, zx]), axis=0) / h
    vy = np.diff(np.hstack([zy, v, zy]), axis=1) / h
    return ux + vy


def _project(
    problem: NsProblem,
    u: np.ndarray,
    v: np.ndarray,
    poisson_rhs_scale: tuple[int, float] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = problem.n_cells
    h = problem.h
    dt = problem.dt
    ws = _workspace(problem)

    u_star, v_star = _advect(problem, u, v)
    u2 = ws.solve_u((u_star + ws.visc_bc_u).ravel(order="F")).reshape((n - 1, n), order="F")
    v2 = ws.solve_v(v_star.ravel(order="F")).reshape((n, n - 1), order="F")

    rhs = (-1.0 / dt) * divergence(problem, u2, v2).ravel(order="F")
    if poisson_rhs_scale is not None:
        component, scale = poisson_rhs_scale
        rhs[component] *= scale
    rhs[0] = 0.0
    p = ws.solve_p(rhs).reshape((n, n), order="F")

    u_new = u2 - dt * np.diff(p, axis=0) / h
    v_new = v2 - dt * np.diff(p, axis=1) / h
    if not (state_is_finite(u_new) and state_is_finite(v_new)):
        raise NonFiniteValueError("projection step produced a non-finite field")
    return u_new, v_new, p


def projection_step(
    problem: NsProblem,
    fields_n: NsFields,
    poisson_rhs_scale: tuple[int, float] | None = None,
) -> NsFields:
    """Advance the base solver one step; the returned velocity field is
    discretely divergence-free up to direct-solve accuracy."""
    u, v, p = _project(problem, fields_n.u, fields_n.v, poisson_rhs_scale)
    return NsFields(u, v, p)


def ns_pair_step(
    problem: NsProblem,
    fields_n: NsFields,
    fields_nm1: NsFields,
    n: int,
) -> StepOutput:
    """One paired advance: projection base plus extrapolated velocity check
    from the two newest base fields. Pressure is not checked."""
    new = projection_step(problem, fields_n)
    aux = (
        extrapolation_aux(fields_n.u, fields_nm1.u),
        extrapolation_aux(fields_n.v, fields_nm1.v),
    )
    return StepOutput((new.u, new.v), aux, n + 1)


class NsPair(SchemePair):
    """Trial driver for the cavity flow.

    Fault hooks: ``previous-solution`` corrupts one entry of the stored u
    field (row-major flat index) before the step consumes it;
    ``linear-rhs`` scales one entry of the assembled pressure Poisson
    right-hand side before the solve.
    """

    first_checked_step = 2

    def __init__(self, problem: NsProblem):
        super().__init__(problem.grid)
        self.problem = problem
        _workspace(problem)  # build factorizations up front
        self._fields = NsFields.at_rest(problem)
        self._prev: tuple[np.ndarray, np.ndarray] | None = None
        self._n = 0

    def _start(self):
        self._fields = NsFields.at_rest(self.problem)
        self._prev = None
        self._n = 0

    def base_snapshot(self):
        return (self._fields.u.copy(), self._fields.v.copy())

    def fault_component_count(self, mode: str) -> int:
        if mode == "previous-solution":
            return self._fields.u.size
        if mode == "linear-rhs":
            return self.problem.n_cells**2
        raise ConfigError(f"fault mode {mode!r} is not applicable to {type(self).__name__}")

    def advance(self) -> StepOutput | None:
        out_index = self._n + 1
        if self._armed("previous-solution", out_index):
            self._fields.u.flat[self._fault.component] *= self._fault.scale
            self.injection_count += 1
        rhs_scale = None
        if self._armed("linear-rhs", out_index):
            rhs_scale = (self._fault.component, self._fault.scale)
            self.injection_count += 1
        u, v, p = _project(self.problem, self._fields.u, self._fields.v, rhs_scale)
        aux = None
        if self._compute_aux and self._prev is not None:
            aux = (
                extrapolation_aux(self._fields.u, self._prev[0]),
                extrapolation_aux(self._fields.v, self._prev[1]),
            )
        self._prev = (self._fields.u, self._fields.v)
        self._fields = NsFields(u, v, p)
        self._n = out_index
        if not self._compute_aux or aux is None:
            return None
        return StepOutput((u, v), aux, out_index)

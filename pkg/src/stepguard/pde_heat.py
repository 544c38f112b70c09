"""Finite-difference scheme pairs for the 1-D nonhomogeneous heat equation
u_t = k u_xx + q(x, t) on x in [0, 1] with homogeneous Dirichlet boundaries.

Two pairs are provided: backward Euler checked by forward Euler (one
tridiagonal solve vs. one stencil application per step) and Crank-Nicolson
checked by the leapfrog scheme (centered in time and space, built entirely
from the two newest base solutions). States hold interior nodes only; the
zero boundary values are folded into the stencils, which keeps corruption
target indexing identical across schemes.

Source evaluations are sampled pointwise at the nodes and cached per time
level, so a corrupted evaluation is consumed by every scheme that reads that
time level, exactly like a corrupted value held in memory would be.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .core import (
    ConfigError,
    NonFiniteValueError,
    SchemePair,
    SolverError,
    StepOutput,
    TimeGrid,
    state_is_finite,
)

__all__ = [
    "HeatProblem",
    "TridiagonalSystem",
    "solve_tridiagonal",
    "fe_be_pair_step",
    "richardson_cn_pair_step",
    "FeBePair",
    "RichardsonCnPair",
]


@dataclass(frozen=True)
class HeatProblem:
    """Problem setup: diffusivity k, source q(x, t), initial profile v(x),
    spacings dx and dt, final time t_end. 1/dx must be an integer so the
    interior nodes tile [0, 1] exactly."""

    k: float
    q: Callable[[np.ndarray, float], np.ndarray]
    v: Callable[[np.ndarray], np.ndarray]
    dx: float
    dt: float
    t_end: float

    def __post_init__(self):
        if self.k <= 0.0 or self.dx <= 0.0 or self.dt <= 0.0 or self.t_end <= 0.0:
            raise ConfigError("k, dx, dt, t_end must all be positive")
        cells = 1.0 / self.dx
        if abs(cells - round(cells)) > 1e-9 * cells:
            raise ConfigError(f"1/dx must be an integer, got dx={self.dx}")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"t_end must be a multiple of dt, got dt={self.dt}")

    @property
    def n_interior(self) -> int:
        return round(1.0 / self.dx) - 1

    @property
    def n_steps(self) -> int:
        return round(self.t_end / self.dt)

    @property
    def r(self) -> float:
        return self.k * self.dt / self.dx**2

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.dt, self.n_steps)

    def x_nodes(self) -> np.ndarray:
        return self.dx * np.arange(1, self.n_interior + 1)

    def q_at(self, t: float) -> np.ndarray:
        out = np.asarray(self.q(self.x_nodes(), t), dtype=float)
        return np.broadcast_to(out, (self.n_interior,)).astype(float, copy=True)

    def initial_state(self) -> np.ndarray:
        u0 = np.asarray(self.v(self.x_nodes()), dtype=float).copy()
        if not state_is_finite(u0):
            raise ConfigError("initial profile is non-finite")
        return u0


@dataclass(frozen=True)
class TridiagonalSystem:
    """Coefficients of a tridiagonal system: sub/main/super diagonals and the
    right-hand side. sub[0] and sup[-1] are ignored padding slots."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        n = len(self.diag)
        if not (len(self.sub) == len(self.sup) == len(self.rhs) == n):
            raise ConfigError("tridiagonal arrays must have equal length")


def _solve_bands(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        out = solve_banded((1, 1), ab, rhs, overwrite_ab=False, overwrite_b=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"tridiagonal solve broke down: {exc}") from exc
    return out


def solve_tridiagonal(system: TridiagonalSystem) -> np.ndarray:
    """Direct solve of a tridiagonal system (banded LU, no pivoting needed for
    the diagonally dominant systems produced here)."""
    n = len(system.diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = system.sup[:-1]
    ab[1, :] = system.diag
    ab[2, :-1] = system.sub[1:]
    return _solve_bands(ab, np.asarray(system.rhs, dtype=float))


def _dirichlet_lap(u: np.ndarray) -> np.ndarray:
    """Second difference u_{j-1} - 2 u_j + u_{j+1} with zero boundary values
    (no 1/dx^2 factor; callers fold it into r)."""
    out = -2.0 * u
    out[:-1] += u[1:]
    out[1:] += u[:-1]
    return out


@lru_cache(maxsize=32)
def _heat_bands(problem: HeatProblem) -> tuple[np.ndarray, np.ndarray]:
    """(backward Euler bands, Crank-Nicolson bands) for solve_banded."""
    m = problem.n_interior
    r = problem.r
    be = np.zeros((3, m))
    be[0, 1:] = -r
    be[1, :] = 1.0 + 2.0 * r
    be[2, :-1] = -r
    cn = np.zeros((3, m))
    cn[0, 1:] = -r / 2.0
    cn[1, :] = 1.0 + r
    cn[2, :-1] = -r / 2.0
    return be, cn


def _maybe_scale(rhs: np.ndarray, rhs_scale: tuple[int, float] | None) -> np.ndarray:
    if rhs_scale is not None:
        component, scale = rhs_scale
        rhs[component] *= scale
    return rhs


def _check_step(u: np.ndarray, what: str) -> np.ndarray:
    if not state_is_finite(u):
        raise NonFiniteValueError(f"{what} is non-finite")
    return u


def fe_be_pair_step(
    problem: HeatProblem,
    u_n: np.ndarray,
    n: int,
    q_n: np.ndarray | None = None,
    q_np1: np.ndarray | None = None,
    rhs_scale: tuple[int, float] | None = None,
    include_aux: bool = True,
) -> StepOutput:
    """Backward Euler base (tridiagonal solve) with the forward Euler check
    (one stencil application) from the same state.

    ``q_n`` / ``q_np1`` let callers pass already-evaluated source vectors at
    the two time levels; ``rhs_scale`` scales one component of the assembled
    solve right-hand side (the fault injector's hook).
    """
    dt = problem.dt
    if q_np1 is None:
        q_np1 = problem.q_at(problem.grid.t(n + 1))
    rhs = _maybe_scale(u_n + dt * q_np1, rhs_scale)
    be_bands, _ = _heat_bands(problem)
    base = _check_step(_solve_bands(be_bands, rhs), "base step result")
    aux = None
    if include_aux:
        if q_n is None:
            q_n = problem.q_at(problem.grid.t(n))
        aux = _check_step(u_n + problem.r * _dirichlet_lap(u_n) + dt * q_n, "auxiliary step result")
    return StepOutput(base, aux, n + 1)


def _cn_base(
    problem: HeatProblem,
    u_n: np.ndarray,
    n: int,
    q_n: np.ndarray,
    q_np1: np.ndarray,
    rhs_scale: tuple[int, float] | None,
) -> np.ndarray:
    r = problem.r
    rhs = u_n + (r / 2.0) * _dirichlet_lap(u_n) + (problem.dt / 2.0) * (q_n + q_np1)
    _, cn_bands = _heat_bands(problem)
    return _check_step(_solve_bands(cn_bands, _maybe_scale(rhs, rhs_scale)), "base step result")


def richardson_cn_pair_step(
    problem: HeatProblem,
    u_n: np.ndarray,
    u_nm1: np.ndarray,
    n: int,
    q_n: np.ndarray | None = None,
    q_np1: np.ndarray | None = None,
    rhs_scale: tuple[int, float] | None = None,
    include_aux: bool = True,
) -> StepOutput:
    """Crank-Nicolson base with the leapfrog check.

    The leapfrog prediction is centered in time, so it needs the two newest
    base solutions; callers take the very first step with the base scheme
    alone (see RichardsonCnPair).
    """
    if q_n is None:
        q_n = problem.q_at(problem.grid.t(n))
    if q_np1 is None:
        q_np1 = problem.q_at(problem.grid.t(n + 1))
    base = _cn_base(problem, u_n, n, q_n, q_np1, rhs_scale)
    aux = None
    if include_aux:
        aux = u_nm1 + 2.0 * problem.r * _dirichlet_lap(u_n) + 2.0 * problem.dt * q_n
        _check_step(aux, "auxiliary step result")
    return StepOutput(base, aux, n + 1)


class _HeatPairBase(SchemePair):
    """Shared fault hooks: ``derivative-eval`` corrupts one node of the fresh
    source evaluation (which is then consumed wherever that time level is
    read), ``linear-rhs`` scales one component of the base solve's assembled
    right-hand side, ``previous-solution`` corrupts the newest stored
    solution in place."""

    def __init__(self, problem: HeatProblem):
        super().__init__(problem.grid)
        self.problem = problem

    def fault_component_count(self, mode: str) -> int:
        if mode in ("derivative-eval", "linear-rhs", "previous-solution"):
            return self.problem.n_interior
        raise ConfigError(f"fault mode {mode!r} is not applicable to {type(self).__name__}")

    def _source_eval(self, out_index: int) -> np.ndarray:
        q_new = self.problem.q_at(self.problem.grid.t(out_index))
        if self._armed("derivative-eval", out_index):
            q_new[self._fault.component] *= self._fault.scale
            self.injection_count += 1
        return q_new

    def _rhs_scale(self, out_index: int) -> tuple[int, float] | None:
        if self._armed("linear-rhs", out_index):
            self.injection_count += 1
            return (self._fault.component, self._fault.scale)
        return None


class FeBePair(_HeatPairBase):
    """Trial driver for the backward/forward Euler pair."""

    first_checked_step = 1

    def _start(self):
        self._u = self.problem.initial_state()
        self._q_old = self.problem.q_at(0.0)
        self._n = 0

    def base_snapshot(self):
        return self._u.copy()

    def advance(self) -> StepOutput | None:
        out_index = self._n + 1
        if self._armed("previous-solution", out_index):
            self._u[self._fault.component] *= self._fault.scale
            self.injection_count += 1
        q_new = self._source_eval(out_index)
        out = fe_be_pair_step(
            self.problem,
            self._u,
            self._n,
            q_n=self._q_old,
            q_np1=q_new,
            rhs_scale=self._rhs_scale(out_index),
            include_aux=self._compute_aux,
        )
        self._u = np.asarray(out.base, dtype=float)
        self._q_old = q_new
        self._n = out_index
        return out if self._compute_aux else None


class RichardsonCnPair(_HeatPairBase):
    """Trial driver for the Crank-Nicolson/leapfrog pair. The first step is
    taken by the base scheme alone; checks start once two base solutions
    exist."""

    first_checked_step = 2

    def _start(self):
        self._u = self.problem.initial_state()
        self._u_prev: np.ndarray | None = None
        self._q_old = self.problem.q_at(0.0)
        self._n = 0

    def base_snapshot(self):
        return self._u.copy()

    def advance(self) -> StepOutput | None:
        out_index = self._n + 1
        if self._armed("previous-solution", out_index):
            self._u[self._fault.component] *= self._fault.scale
            self.injection_count += 1
        q_new = self._source_eval(out_index)
        rhs_scale = self._rhs_scale(out_index)
        if self._u_prev is None:
            base = _cn_base(self.problem, self._u, self._n, self._q_old, q_new, rhs_scale)
            out = None
        else:
            step = richardson_cn_pair_step(
                self.problem,
                self._u,
                self._u_prev,
                self._n,
                q_n=self._q_old,
                q_np1=q_new,
                rhs_scale=rhs_scale,
                include_aux=self._compute_aux,
            )
            base = np.asarray(step.base, dtype=float)
            out = step if self._compute_aux else None
        self._u_prev = self._u
        self._u = base
        self._q_old = q_new
        self._n = out_index
        return out

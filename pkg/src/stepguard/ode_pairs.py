"""Base/auxiliary scheme pairs for first-order ODE systems u' = f(t, u).

Four families are provided:

* embedded Runge-Kutta pairs (shared stage evaluations, two weight sets),
* Adams-Bashforth pairs of neighboring orders over the same stored data,
* an implicit Adams-Moulton base checked by the explicit Adams-Bashforth
  formula of the same order (the explicit formula reads only data the
  implicit solve already computed, so open-loop use is stable even on stiff
  problems),
* order-1 extrapolation from the two newest base states, usable with any
  base scheme.

Drivers (RkPair, AbPair, AmAbPair, ExtrapolationPair) own one trial's state
and expose the SchemePair contract; the *_step functions are the pure
single-step operations.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

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
    "OdeProblem",
    "RkTableau",
    "MIDPOINT_EULER",
    "FEHLBERG_45",
    "BOGACKI_SHAMPINE_23",
    "AB_WEIGHTS",
    "AM_WEIGHTS",
    "NewtonConfig",
    "LmmHistory",
    "rk_pair_step",
    "ab_pair_step",
    "am_base_ab_aux_step",
    "extrapolation_aux",
    "bootstrap_history",
    "RkPair",
    "AbPair",
    "AmAbPair",
    "ExtrapolationPair",
]


@dataclass(frozen=True)
class OdeProblem:
    """Initial-value problem u' = f(t, u), u(t0) = u0, on a fixed grid.

    ``jac`` is an optional analytic Jacobian (t, u) -> matrix for implicit
    solves; finite differences are used when absent.
    """

    f: Callable[[float, np.ndarray], np.ndarray]
    u0: np.ndarray
    grid: TimeGrid
    jac: Callable[[float, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "u0", np.atleast_1d(np.asarray(self.u0, dtype=float)))
        if not state_is_finite(self.u0):
            raise ConfigError("initial state must be finite")

    @property
    def dim(self) -> int:
        return self.u0.size


@dataclass(frozen=True)
class RkTableau:
    """Explicit embedded Runge-Kutta pair: shared stages, two weight sets.

    ``a`` holds the strictly lower-triangular stage rows (row i has i
    entries). The base weights are the higher-order combination; the
    auxiliary weights give the cheap check.
    """

    name: str
    c: tuple[float, ...]
    a: tuple[tuple[float, ...], ...]
    b_base: tuple[float, ...]
    b_aux: tuple[float, ...]
    order_base: int
    order_aux: int

    def __post_init__(self):
        s = len(self.c)
        if len(self.a) != s or any(len(row) != i for i, row in enumerate(self.a)):
            raise ConfigError(f"{self.name}: malformed stage matrix")
        if len(self.b_base) != s or len(self.b_aux) != s:
            raise ConfigError(f"{self.name}: weight length != stage count")
        for b in (self.b_base, self.b_aux):
            if abs(math.fsum(b) - 1.0) > 1e-12:
                raise ConfigError(f"{self.name}: weights must sum to 1")
        if any(not 0.0 <= ci <= 1.0 for ci in self.c):
            raise ConfigError(f"{self.name}: stage nodes must lie in [0, 1]")

    @property
    def stages(self) -> int:
        return len(self.c)


# Explicit midpoint as base with the Euler prediction reusing its first stage.
MIDPOINT_EULER = RkTableau(
    name="rk-midpoint-euler",
    c=(0.0, 0.5),
    a=((), (0.5,)),
    b_base=(0.0, 1.0),
    b_aux=(1.0, 0.0),
    order_base=2,
    order_aux=1,
)

# Fehlberg's classic 4(5) pair; the 5th-order combination is the base.
FEHLBERG_45 = RkTableau(
    name="rk45",
    c=(0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2),
    a=(
        (),
        (1 / 4,),
        (3 / 32, 9 / 32),
        (1932 / 2197, -7200 / 2197, 7296 / 2197),
        (439 / 216, -8.0, 3680 / 513, -845 / 4104),
        (-8 / 27, 2.0, -3554 / 2565, 1859 / 4104, -11 / 40),
    ),
    b_base=(16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55),
    b_aux=(25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0),
    order_base=5,
    order_aux=4,
)

# Bogacki-Shampine 2(3): the standard 2/3 embedded pair.
BOGACKI_SHAMPINE_23 = RkTableau(
    name="rk23",
    c=(0.0, 1 / 2, 3 / 4, 1.0),
    a=((), (1 / 2,), (0.0, 3 / 4), (2 / 9, 1 / 3, 4 / 9)),
    b_base=(2 / 9, 1 / 3, 4 / 9, 0.0),
    b_aux=(7 / 24, 1 / 4, 1 / 3, 1 / 8),
    order_base=3,
    order_aux=2,
)

# Adams-Bashforth / Adams-Moulton weights, newest evaluation first.
AB_WEIGHTS: dict[int, tuple[float, ...]] = {
    1: (1.0,),
    2: (3 / 2, -1 / 2),
    3: (23 / 12, -16 / 12, 5 / 12),
    4: (55 / 24, -59 / 24, 37 / 24, -9 / 24),
    5: (1901 / 720, -2774 / 720, 2616 / 720, -1274 / 720, 251 / 720),
}
AM_WEIGHTS: dict[int, tuple[float, ...]] = {
    1: (1.0,),
    2: (1 / 2, 1 / 2),
    3: (5 / 12, 8 / 12, -1 / 12),
    4: (9 / 24, 19 / 24, -5 / 24, 1 / 24),
    5: (251 / 720, 646 / 720, -264 / 720, 106 / 720, -19 / 720),
}


@dataclass(frozen=True)
class NewtonConfig:
    """Implicit-solve settings. The tolerance is deliberately tight so that
    solver error can never masquerade as an injected fault."""

    tol: float = 1e-12
    max_iter: int = 25


class LmmHistory:
    """Rolling memory for multistep schemes: the last ``capacity`` accepted
    base states and their derivative evaluations, aligned by index, newest
    last. The stored arrays are owned by the scheme and may be corrupted in
    place by the fault injector (that is the point of storing them)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"history capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.states: deque[np.ndarray] = deque(maxlen=capacity)
        self.derivs: deque[np.ndarray] = deque(maxlen=capacity)
        self.last_index = -1

    @classmethod
    def from_data(cls, states, derivs, last_index: int) -> "LmmHistory":
        if len(states) != len(derivs):
            raise ConfigError("states and derivative evaluations must align")
        hist = cls(len(states))
        for u, du in zip(states, derivs):
            hist.states.append(np.atleast_1d(np.asarray(u, dtype=float)))
            hist.derivs.append(np.atleast_1d(np.asarray(du, dtype=float)))
        hist.last_index = last_index
        return hist

    def append(self, state: np.ndarray, deriv: np.ndarray) -> None:
        self.states.append(state)
        self.derivs.append(deriv)
        self.last_index += 1

    def __len__(self) -> int:
        return len(self.states)

    @property
    def newest_state(self) -> np.ndarray:
        return self.states[-1]


def _eval_f(f, t: float, u: np.ndarray) -> np.ndarray:
    out = np.atleast_1d(np.asarray(f(t, u), dtype=float))
    if not np.all(np.isfinite(out)):
        raise NonFiniteValueError(f"derivative evaluation at t={t} is non-finite")
    return out


def _require_finite(u: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(u)):
        raise NonFiniteValueError(f"{what} is non-finite")
    return u


def rk_pair_step(
    problem: OdeProblem,
    tableau: RkTableau,
    u_n: np.ndarray,
    n: int,
    include_aux: bool = True,
) -> StepOutput:
    """One embedded-pair step from u_n (solution index n) to index n + 1.

    The shared stages are evaluated exactly once; base and auxiliary results
    are two weight combinations of the same stage values.
    """
    h = problem.grid.dt
    t_n = problem.grid.t(n)
    u_n = np.asarray(u_n, dtype=float)
    k = []
    for i in range(tableau.stages):
        ui = u_n
        row = tableau.a[i]
        for j, aij in enumerate(row):
            if aij != 0.0:
                ui = ui + (h * aij) * k[j]
        k.append(_eval_f(problem.f, t_n + tableau.c[i] * h, ui))

    def combine(weights):
        acc = u_n.copy()
        for w, kj in zip(weights, k):
            if w != 0.0:
                acc += (h * w) * kj
        return acc

    base = _require_finite(combine(tableau.b_base), "base step result")
    aux = None
    if include_aux:
        aux = _require_finite(combine(tableau.b_aux), "auxiliary step result")
    return StepOutput(base, aux, n + 1)


def ab_pair_step(
    problem: OdeProblem,
    history: LmmHistory,
    orders: tuple[int, int],
    include_aux: bool = True,
) -> StepOutput:
    """One Adams-Bashforth pair step using the stored evaluations.

    ``orders`` is (auxiliary order, base order). Both combinations read the
    same stored data; one new derivative evaluation (at the freshly accepted
    state) is appended so the next step finds its data in place.
    """
    p_aux, p_base = orders
    if p_aux not in AB_WEIGHTS or p_base not in AB_WEIGHTS:
        raise ConfigError(f"unsupported AB orders {orders}")
    if len(history) < p_base:
        raise SolverError(
            f"history holds {len(history)} entries, base order {p_base} needs more"
        )
    h = problem.grid.dt
    n = history.last_index
    u_n = history.newest_state

    def combine(p):
        acc = u_n.copy()
        for i, w in enumerate(AB_WEIGHTS[p]):
            acc += (h * w) * history.derivs[-1 - i]
        return acc

    base = _require_finite(combine(p_base), "base step result")
    aux = None
    if include_aux:
        aux = _require_finite(combine(p_aux), "auxiliary step result")
    history.append(base, _eval_f(problem.f, problem.grid.t(n + 1), base))
    return StepOutput(base, aux, n + 1)


def _fd_jacobian(f, t: float, u: np.ndarray, f0: np.ndarray) -> np.ndarray:
    eps = math.sqrt(np.finfo(float).eps)
    jac = np.empty((u.size, u.size))
    for j in range(u.size):
        du = eps * max(1.0, abs(u[j]))
        up = u.copy()
        up[j] += du
        jac[:, j] = (_eval_f(f, t, up) - f0) / du
    return jac


def am_base_ab_aux_step(
    problem: OdeProblem,
    history: LmmHistory,
    order: int,
    solver: NewtonConfig | None = None,
    include_aux: bool = True,
) -> StepOutput:
    """Implicit Adams-Moulton base step with the same-order Adams-Bashforth
    prediction as auxiliary.

    The auxiliary combination uses only stored data and doubles as the Newton
    starting iterate. Newton failure raises SolverError (a solver breakdown,
    not a silent-error flag).
    """
    p = order
    if p not in AM_WEIGHTS:
        raise ConfigError(f"unsupported AM order {p}")
    if len(history) < p:
        raise SolverError(f"history holds {len(history)} entries, order {p} needs more")
    solver = solver or NewtonConfig()
    h = problem.grid.dt
    n = history.last_index
    t_np1 = problem.grid.t(n + 1)
    u_n = history.newest_state

    aux = u_n.copy()
    for i, w in enumerate(AB_WEIGHTS[p]):
        aux += (h * w) * history.derivs[-1 - i]
    _require_finite(aux, "auxiliary step result")

    beta = AM_WEIGHTS[p]
    rhs_const = u_n.copy()
    for i in range(1, p):
        rhs_const += (h * beta[i]) * history.derivs[-i]

    hb0 = h * beta[0]
    x = aux.copy()
    eye = np.eye(x.size)
    converged = False
    for _ in range(solver.max_iter):
        fx = _eval_f(problem.f, t_np1, x)
        g = x - rhs_const - hb0 * fx
        if float(np.max(np.abs(g))) <= solver.tol:
            converged = True
            break
        jf = (
            np.asarray(problem.jac(t_np1, x), dtype=float)
            if problem.jac is not None
            else _fd_jacobian(problem.f, t_np1, x, fx)
        )
        try:
            dx = np.linalg.solve(eye - hb0 * jf, g)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Newton linearization singular at t={t_np1}") from exc
        x = x - dx
    if not converged:
        raise SolverError(
            f"Newton failed to reach {solver.tol} in {solver.max_iter} iterations at t={t_np1}"
        )
    base = _require_finite(x, "base step result")
    history.append(base, _eval_f(problem.f, t_np1, base))
    return StepOutput(base, aux if include_aux else None, n + 1)


def extrapolation_aux(b_prev: np.ndarray, b_prev2: np.ndarray) -> np.ndarray:
    """Order-1 extrapolation of the next value from the two newest ones."""
    b_prev = np.asarray(b_prev, dtype=float)
    b_prev2 = np.asarray(b_prev2, dtype=float)
    if b_prev.shape != b_prev2.shape:
        raise ValueError(f"state shape mismatch: {b_prev.shape} vs {b_prev2.shape}")
    return 2.0 * b_prev - b_prev2


_RK4_C = (0.0, 0.5, 0.5, 1.0)
_RK4_A = ((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0))
_RK4_B = (1 / 6, 1 / 3, 1 / 3, 1 / 6)


def _rk4_step(f, t: float, u: np.ndarray, h: float, k1: np.ndarray | None = None) -> np.ndarray:
    k = [k1 if k1 is not None else _eval_f(f, t, u)]
    for i in range(1, 4):
        ui = u
        for j, aij in enumerate(_RK4_A[i]):
            if aij != 0.0:
                ui = ui + (h * aij) * k[j]
        k.append(_eval_f(f, t + _RK4_C[i] * h, ui))
    out = u.copy()
    for w, kj in zip(_RK4_B, k):
        out += (h * w) * kj
    return out


def bootstrap_history(problem: OdeProblem, p: int) -> LmmHistory:
    """Start-up for multistep schemes: the first p - 1 states come from
    classical RK4 at the trial's fixed step, so early differences are
    representative of the multistep method's own accuracy. Detection stays in
    warm-up during these steps regardless.
    """
    if p < 1:
        raise ConfigError(f"order must be >= 1, got {p}")
    hist = LmmHistory(p)
    u = problem.u0.copy()
    deriv = _eval_f(problem.f, problem.grid.t(0), u)
    hist.append(u, deriv)
    h = problem.grid.dt
    for i in range(p - 1):
        try:
            u = _rk4_step(problem.f, problem.grid.t(i), hist.newest_state, h, k1=hist.derivs[-1])
        except NonFiniteValueError as exc:
            raise SolverError(f"non-finite bootstrap value at step {i + 1}") from exc
        if not state_is_finite(u):
            raise SolverError(f"non-finite bootstrap value at step {i + 1}")
        hist.append(u, _eval_f(problem.f, problem.grid.t(i + 1), u))
    return hist


class _StageCorruptor:
    """Wraps a derivative function so a single stage evaluation of one step
    has one component scaled. Replaces the evaluation result, never adds
    evaluations."""

    def __init__(self, f, stage: int, component: int, scale: float, on_inject):
        self._f = f
        self._stage = stage
        self._component = component
        self._scale = scale
        self._on_inject = on_inject
        self._calls = 0

    def __call__(self, t, u):
        out = np.atleast_1d(np.asarray(self._f(t, u), dtype=float))
        if self._calls == self._stage:
            out = out.copy()
            out[self._component] *= self._scale
            self._on_inject()
        self._calls += 1
        return out


class RkPair(SchemePair):
    """Trial driver for an embedded Runge-Kutta pair.

    Fault hooks: ``derivative-eval`` corrupts one component of one stage
    evaluation (shared by both weight combinations); ``previous-solution``
    corrupts the stored state the step starts from.
    """

    first_checked_step = 1

    def __init__(self, problem: OdeProblem, tableau: RkTableau):
        super().__init__(problem.grid)
        self.problem = problem
        self.tableau = tableau
        self._u = problem.u0.copy()
        self._n = 0

    def _start(self):
        self._u = self.problem.u0.copy()
        self._n = 0

    def base_snapshot(self):
        return self._u.copy()

    def fault_component_count(self, mode: str) -> int:
        if mode in ("derivative-eval", "previous-solution"):
            return self.problem.dim
        raise ConfigError(f"fault mode {mode!r} is not applicable to {type(self).__name__}")

    def fault_stage_count(self, mode: str) -> int:
        return self.tableau.stages if mode == "derivative-eval" else 1

    def _note_injection(self):
        self.injection_count += 1

    def _problem_for_step(self, out_index: int) -> OdeProblem:
        if self._armed("derivative-eval", out_index):
            f = _StageCorruptor(
                self.problem.f,
                self._fault.stage,
                self._fault.component,
                self._fault.scale,
                self._note_injection,
            )
            return replace(self.problem, f=f)
        return self.problem

    def advance(self) -> StepOutput | None:
        out_index = self._n + 1
        if self._armed("previous-solution", out_index):
            self._u[self._fault.component] *= self._fault.scale
            self.injection_count += 1
        out = rk_pair_step(
            self._problem_for_step(out_index),
            self.tableau,
            self._u,
            self._n,
            include_aux=self._compute_aux,
        )
        self._u = np.asarray(out.base, dtype=float)
        self._n = out_index
        return out if self._compute_aux else None


class AbPair(SchemePair):
    """Trial driver for an Adams-Bashforth pair of neighboring orders.

    Fault hooks: ``derivative-eval`` corrupts the newest stored evaluation
    right before it is consumed (it then stays corrupted in memory for the
    following steps); ``previous-solution`` corrupts one entry of the stored
    data, chosen among the newest state and every stored evaluation. The
    component index encodes (vector, entry) as vector * dim + entry with
    vector 0 = newest state and vector k >= 1 = k-th newest evaluation.
    """

    def __init__(self, problem: OdeProblem, order_aux: int, order_base: int):
        if not 1 <= order_aux < order_base:
            raise ConfigError(f"need aux order < base order, got ({order_aux}, {order_base})")
        super().__init__(problem.grid)
        self.problem = problem
        self.orders = (order_aux, order_base)
        self.first_checked_step = order_base
        self._history: LmmHistory | None = None
        self._u = problem.u0.copy()
        self._n = 0

    def _start(self):
        self._history = bootstrap_history(self.problem, self.orders[1])
        self._u = self.problem.u0.copy()
        self._n = 0

    def base_snapshot(self):
        return self._u.copy()

    def fault_component_count(self, mode: str) -> int:
        if mode == "derivative-eval":
            return self.problem.dim
        if mode == "previous-solution":
            return (1 + self.orders[1]) * self.problem.dim
        raise ConfigError(f"fault mode {mode!r} is not applicable to {type(self).__name__}")

    def _apply_memory_fault(self, out_index: int) -> None:
        if self._armed("derivative-eval", out_index):
            self._history.derivs[-1][self._fault.component] *= self._fault.scale
            self.injection_count += 1
        if self._armed("previous-solution", out_index):
            vec, comp = divmod(self._fault.component, self.problem.dim)
            target = self._history.newest_state if vec == 0 else self._history.derivs[-vec]
            target[comp] *= self._fault.scale
            self.injection_count += 1

    def advance(self) -> StepOutput | None:
        out_index = self._n + 1
        if out_index < self.first_checked_step:
            # Replay the bootstrap trajectory; no check is available yet.
            self._u = self._history.states[out_index].copy()
            self._n = out_index
            return None
        self._apply_memory_fault(out_index)
        out = ab_pair_step(
            self.problem, self._history, self.orders, include_aux=self._compute_aux
        )
        self._u = np.asarray(out.base, dtype=float)
        self._n = out_index
        return out if self._compute_aux else None


class AmAbPair(SchemePair):
    """Trial driver for the implicit Adams-Moulton base with the same-order
    Adams-Bashforth auxiliary. Memory fault hooks match AbPair."""

    def __init__(self, problem: OdeProblem, order: int, solver: NewtonConfig | None = None):
        if order not in AM_WEIGHTS:
            raise ConfigError(f"unsupported AM order {order}")
        super().__init__(problem.grid)
        self.problem = problem
        self.order = order
        self.solver = solver or NewtonConfig()
        self.first_checked_step = order
        self._history: LmmHistory | None = None
        self._u = problem.u0.copy()
        self._n = 0

    def _start(self):
        self._history = bootstrap_history(self.problem, self.order)
        self._u = self.problem.u0.copy()
        self._n = 0

    def base_snapshot(self):
        return self._u.copy()

    def fault_component_count(self, mode: str) -> int:
        if mode == "derivative-eval":
            return self.problem.dim
        if mode == "previous-solution":
            return (1 + self.order) * self.problem.dim
        raise ConfigError(f"fault mode {mode!r} is not applicable to {type(self).__name__}")

    def advance(self) -> StepOutput | None:
        out_index = self._n + 1
        if out_index < self.first_checked_step:
            self._u = self._history.states[out_index].copy()
            self._n = out_index
            return None
        if self._armed("derivative-eval", out_index):
            self._history.derivs[-1][self._fault.component] *= self._fault.scale
            self.injection_count += 1
        if self._armed("previous-solution", out_index):
            vec, comp = divmod(self._fault.component, self.problem.dim)
            target = self._history.newest_state if vec == 0 else self._history.derivs[-vec]
            target[comp] *= self._fault.scale
            self.injection_count += 1
        out = am_base_ab_aux_step(
            self.problem,
            self._history,
            self.order,
            self.solver,
            include_aux=self._compute_aux,
        )
        self._u = np.asarray(out.base, dtype=float)
        self._n = out_index
        return out if self._compute_aux else None


class ExtrapolationPair(SchemePair):
    """Any Runge-Kutta base checked by order-1 extrapolation of its own two
    newest outputs. The first check happens once two base states exist."""

    first_checked_step = 2

    def __init__(self, problem: OdeProblem, tableau: RkTableau = FEHLBERG_45):
        super().__init__(problem.grid)
        self.problem = problem
        self.tableau = tableau
        self._u = problem.u0.copy()
        self._u_prev: np.ndarray | None = None
        self._n = 0

    def _start(self):
        self._u = self.problem.u0.copy()
        self._u_prev = None
        self._n = 0

    def base_snapshot(self):
        return self._u.copy()

    def fault_component_count(self, mode: str) -> int:
        if mode in ("derivative-eval", "previous-solution"):
            return self.problem.dim
        raise ConfigError(f"fault mode {mode!r} is not applicable to {type(self).__name__}")

    def fault_stage_count(self, mode: str) -> int:
        return self.tableau.stages if mode == "derivative-eval" else 1

    def advance(self) -> StepOutput | None:
        out_index = self._n + 1
        if self._armed("previous-solution", out_index):
            self._u[self._fault.component] *= self._fault.scale
            self.injection_count += 1
        problem = self.problem
        if self._armed("derivative-eval", out_index):
            def note():
                self.injection_count += 1

            problem = replace(
                self.problem,
                f=_StageCorruptor(
                    self.problem.f,
                    self._fault.stage,
                    self._fault.component,
                    self._fault.scale,
                    note,
                ),
            )
        step = rk_pair_step(problem, self.tableau, self._u, self._n, include_aux=False)
        aux = None
        if self._compute_aux and self._u_prev is not None:
            aux = extrapolation_aux(self._u, self._u_prev)
        self._u_prev = self._u
        self._u = np.asarray(step.base, dtype=float)
        self._n = out_index
        if not self._compute_aux or aux is None:
            return None
        return StepOutput(self._u, aux, out_index)

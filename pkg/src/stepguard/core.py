"""Shared value types for paired time-stepping runs.

A "state" throughout this package is a plain float ndarray: a 1-D vector for
ODE systems and for the interior nodes of a 1-D grid. Solvers that evolve two
coupled fields (the cavity-flow solver) pass states as tuples of arrays, and
norms reduce over the fields by taking the max of the per-field norms.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConfigError",
    "SolverError",
    "NonFiniteValueError",
    "TimeGrid",
    "StepOutput",
    "DifferenceWindow",
    "SchemePair",
    "difference_norm",
    "state_is_finite",
]


class ConfigError(ValueError):
    """Invalid problem, scheme, detector, or fault configuration."""


class SolverError(RuntimeError):
    """A solver failed outright (non-convergence, singular system, bad
    bootstrap). Distinct from a flagged anomaly: this aborts the trial."""


class NonFiniteValueError(RuntimeError):
    """A step produced NaN or Inf.

    Non-finite values are never silent. Callers catch this and flag the step
    immediately instead of feeding the value into the difference window.
    """


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_n = t0 + n * dt for n = 0 .. n_steps."""

    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")

    def t(self, n: int) -> float:
        return self.t0 + n * self.dt

    @property
    def t_end(self) -> float:
        return self.t(self.n_steps)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class StepOutput:
    """One combined advance: the trusted base result and the cheap auxiliary
    prediction for the same step. ``auxiliary`` is None when the caller asked
    for a base-only run or when the scheme has not accumulated enough history
    to form a check yet."""

    base: object
    auxiliary: object
    step_index: int


_NORM_ALIASES = {
    "inf": "inf",
    "infinity": "inf",
    "max": "inf",
    "one": "one",
    "1": "one",
    "l1": "one",
    "two": "two",
    "2": "two",
    "l2": "two",
}


def _canonical_norm(norm: str) -> str:
    try:
        return _NORM_ALIASES[str(norm).lower()]
    except KeyError:
        raise ConfigError(f"unknown norm {norm!r}; use one of inf/one/two") from None


def _vector_norm(diff: np.ndarray, norm: str) -> float:
    if diff.size == 0:
        return 0.0
    if norm == "inf":
        return float(np.max(np.abs(diff)))
    if norm == "one":
        return float(np.sum(np.abs(diff)))
    return float(np.sqrt(np.sum(diff * diff)))


def difference_norm(base, aux, norm: str = "inf") -> float:
    """Norm of (base - aux) in the selected norm (inf is the default).

    Multi-field states (tuples/lists of arrays) reduce to the max of the
    per-field norms. A shape mismatch is a hard error: it signals a harness
    bug, not a silent fault.
    """
    norm = _canonical_norm(norm)
    if isinstance(base, (tuple, list)) or isinstance(aux, (tuple, list)):
        if not isinstance(base, (tuple, list)) or not isinstance(aux, (tuple, list)):
            raise ValueError("cannot compare a multi-field state with a single array")
        if len(base) != len(aux):
            raise ValueError(f"field count mismatch: {len(base)} vs {len(aux)}")
        if len(base) == 0:
            return 0.0
        return max(difference_norm(b, a, norm) for b, a in zip(base, aux))
    base = np.asarray(base, dtype=float)
    aux = np.asarray(aux, dtype=float)
    if base.shape != aux.shape:
        raise ValueError(f"state shape mismatch: {base.shape} vs {aux.shape}")
    return _vector_norm((base - aux).ravel(), norm)


def state_is_finite(state) -> bool:
    if isinstance(state, (tuple, list)):
        return all(state_is_finite(s) for s in state)
    return bool(np.all(np.isfinite(state)))


class SchemePair:
    """Contract every base/auxiliary solver driver implements.

    A driver owns one trial's mutable state: reset() rewinds to t0 and arms
    an optional fault plan, advance() moves the base trajectory forward one
    step and returns the paired outputs for that step. advance() returns None
    while the scheme is still accumulating the history it needs to form a
    check (multistep bootstrap, extrapolation startup) and when the caller
    disabled auxiliary computation. The auxiliary result never feeds back
    into the base trajectory.
    """

    first_checked_step: int = 1

    def __init__(self, grid: TimeGrid):
        self.grid = grid
        self.injection_count = 0
        self._fault = None
        self._compute_aux = True

    def reset(self, fault=None, compute_aux: bool = True) -> None:
        self.injection_count = 0
        self._fault = fault
        self._compute_aux = compute_aux
        self._start()

    def _start(self) -> None:
        raise NotImplementedError

    def advance(self) -> StepOutput | None:
        raise NotImplementedError

    def base_snapshot(self):
        """Copy of the newest base state (for trajectory capture)."""
        raise NotImplementedError

    def fault_component_count(self, mode: str) -> int:
        """Number of scalar corruption sites for the given fault mode."""
        raise NotImplementedError

    def fault_stage_count(self, mode: str) -> int:
        return 1

    def _armed(self, mode: str, step: int) -> bool:
        f = self._fault
        return f is not None and f.mode == mode and f.step == step


class DifferenceWindow:
    """Fixed-capacity FIFO of recent non-negative difference values.

    Pushing a non-finite value raises NonFiniteValueError: such a value is
    itself a detectable anomaly and must be flagged immediately rather than
    stored.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"window capacity must be >= 1, got {capacity}")
        self._buf: deque[float] = deque(maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self._buf.maxlen

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def is_full(self) -> bool:
        return len(self._buf) == self._buf.maxlen

    def push(self, d: float) -> None:
        d = float(d)
        if not math.isfinite(d):
            raise NonFiniteValueError(f"non-finite difference value {d!r}")
        if d < 0.0:
            raise ValueError(f"difference values must be >= 0, got {d}")
        self._buf.append(d)

    def values(self) -> tuple[float, ...]:
        return tuple(self._buf)

    def newest(self) -> float:
        if not self._buf:
            raise IndexError("window is empty")
        return self._buf[-1]

    def clear(self) -> None:
        self._buf.clear()

"""Fault injection and impact measurement.

One corruption event per trial: a single component of some consumed quantity
is multiplied by a draw from Normal(1, sigma^2). Three corruption modes
cover the interesting surfaces:

* ``derivative-eval``: one component of one derivative/source evaluation,
* ``linear-rhs``: one component of a linear solve's right-hand side, applied
  before the solver runs,
* ``previous-solution``: one entry of state held in memory from earlier
  steps (the stored value is overwritten, so downstream reads see it too).

Multiplying finite values by a normal draw keeps everything finite, so the
injected errors stay silent rather than tripping the cheap non-finite guard.

Impact is reported as the fault's displacement of the base solution divided
by the clean run's base/auxiliary gap at the same step, measured at the
first step whose base output the fault touches (the fault's target step).
Randomness comes from a counter-based Philox generator keyed per trial, so
every corruption replays exactly from (seed, spec).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, difference_norm

__all__ = [
    "FAULT_MODES",
    "FaultSpec",
    "ResolvedFault",
    "LteNormalizedError",
    "make_rng",
    "draw_scale",
    "corrupt",
    "resolve_fault",
    "lte_normalized_error",
]

FAULT_MODES = ("derivative-eval", "linear-rhs", "previous-solution")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) so draws replay across platforms."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def draw_scale(rng: np.random.Generator, sigma2: float) -> float:
    return float(rng.normal(1.0, math.sqrt(sigma2)))


@dataclass(frozen=True)
class FaultSpec:
    """What to corrupt. Unset step/component/stage are sampled uniformly at
    resolution time; an explicit ``scale`` pins the multiplier instead of
    drawing it (used by the deterministic scenario reproductions)."""

    mode: str
    sigma2: float
    step: int | None = None
    component: int | None = None
    stage: int | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.mode not in FAULT_MODES:
            raise ConfigError(f"unknown fault mode {self.mode!r}; use one of {FAULT_MODES}")
        if not self.sigma2 > 0.0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class ResolvedFault:
    """A fully concrete corruption plan for one trial."""

    mode: str
    step: int
    component: int
    stage: int
    scale: float
    sigma2: float


def corrupt(
    values: np.ndarray,
    component: int,
    sigma2: float | None = None,
    rng: np.random.Generator | None = None,
    scale: float | None = None,
) -> tuple[np.ndarray, float]:
    """Return a copy of ``values`` with one component multiplied by the
    corruption factor, plus the factor actually applied."""
    if scale is None:
        if rng is None or sigma2 is None:
            raise ConfigError("corrupt() needs either a pinned scale or (rng, sigma2)")
        if not sigma2 > 0.0:
            raise ConfigError(f"sigma2 must be positive, got {sigma2}")
        scale = draw_scale(rng, sigma2)
    out = np.array(values, dtype=float, copy=True)
    out.flat[component] *= scale
    return out, float(scale)


def resolve_fault(spec: FaultSpec, pair, window_p: int, rng: np.random.Generator) -> ResolvedFault:
    """Sample the unspecified parts of a fault spec against one scheme pair.

    Target steps are restricted to where a flag decision is possible at the
    step and the step after: past scheme startup plus detector warm-up, and
    before the final step. The corruption amount is drawn first so equal
    seeds produce equal corruption sequences across schemes.
    """
    lo = pair.first_checked_step + window_p + 1
    hi = pair.grid.n_steps - 1
    if lo > hi:
        raise ConfigError(
            f"no checked steps to target: first eligible step {lo} is past {hi}"
        )
    scale = spec.scale if spec.scale is not None else draw_scale(rng, spec.sigma2)

    if spec.step is None:
        step = int(rng.integers(lo, hi + 1))
    else:
        step = int(spec.step)
        if not lo <= step <= hi:
            raise ConfigError(f"fault step {step} outside checked range [{lo}, {hi}]")

    n_stages = pair.fault_stage_count(spec.mode)
    if spec.stage is None:
        stage = int(rng.integers(n_stages)) if n_stages > 1 else 0
    else:
        stage = int(spec.stage)
        if not 0 <= stage < n_stages:
            raise ConfigError(f"stage {stage} outside [0, {n_stages})")

    n_components = pair.fault_component_count(spec.mode)
    if spec.component is None:
        component = int(rng.integers(n_components))
    else:
        component = int(spec.component)
        if not 0 <= component < n_components:
            raise ConfigError(f"component {component} outside [0, {n_components})")

    return ResolvedFault(spec.mode, step, component, stage, float(scale), spec.sigma2)


@dataclass(frozen=True)
class LteNormalizedError:
    """Fault impact at the measurement step: displacement of the base
    solution over the clean base/auxiliary gap. A zero denominator yields
    the +inf sentinel (excluded from regressions, counted separately)."""

    value: float
    numerator: float
    denominator: float
    step: int


def lte_normalized_error(
    faulty_b_n,
    clean_b_n,
    clean_a_n,
    norm: str = "inf",
    step: int = -1,
) -> LteNormalizedError:
    numerator = difference_norm(faulty_b_n, clean_b_n, norm)
    denominator = difference_norm(clean_b_n, clean_a_n, norm)
    value = numerator / denominator if denominator > 0.0 else math.inf
    return LteNormalizedError(value, numerator, denominator, step)

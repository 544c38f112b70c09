"""Anomaly detection on the per-step difference sequence.

The detector watches the scalar sequence of base/auxiliary differences and
flags a step when a relative-jump indicator and a variance-change indicator
both exceed their thresholds. Both indicators are ratios, so verdicts do not
depend on the overall scale of the sequence. Thresholds self-tune: whenever a
step is not flagged, each threshold grows by ``gamma_up`` if its indicator
landed above it and shrinks by ``gamma_down`` otherwise, which keeps each
threshold hovering just above the indicator's recent range without any
user-chosen absolute scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DifferenceWindow, NonFiniteValueError

__all__ = [
    "EPS_ZERO",
    "DETECTOR_MODES",
    "DetectorConfig",
    "DetectorVerdict",
    "Detector",
    "compute_jump",
    "compute_variance_ratio",
]

# Below this, a value is treated as exactly zero for the 0/0 guards. Denormal
# scale on purpose: genuine difference values sit many orders above it.
EPS_ZERO = 1e-300

DETECTOR_MODES = ("both", "jump-only", "variance-only")

_MODE_ALIASES = {
    "both": "both",
    "jump": "jump-only",
    "jump-only": "jump-only",
    "variance": "variance-only",
    "variance-only": "variance-only",
}


@dataclass(frozen=True)
class DetectorConfig:
    """Tuning constants. mode selects which indicators can raise a flag;
    "both" requires jump and variance-change to exceed simultaneously."""

    gamma_up: float = 1.4
    gamma_down: float = 0.95
    window_p: int = 10
    tau_j0: float = 1.0
    tau_v0: float = 1.0
    mode: str = "both"

    def __post_init__(self):
        if not self.gamma_up > 1.0:
            raise ConfigError(f"gamma_up must be > 1, got {self.gamma_up}")
        if not 0.0 < self.gamma_down < 1.0:
            raise ConfigError(f"gamma_down must be in (0, 1), got {self.gamma_down}")
        if self.window_p < 1:
            raise ConfigError(f"window_p must be >= 1, got {self.window_p}")
        if not (self.tau_j0 > 0.0 and self.tau_v0 > 0.0):
            raise ConfigError("initial thresholds must be positive")
        mode = _MODE_ALIASES.get(str(self.mode).lower())
        if mode is None:
            raise ConfigError(f"unknown detector mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)


@dataclass(frozen=True)
class DetectorVerdict:
    """Outcome of presenting one difference value. Indicator values are None
    while the window is still filling (no flag can be raised then)."""

    flagged: bool
    j_value: float | None
    v_value: float | None
    thresholds_after: tuple[float, float]


def compute_jump(d_n: float, d_np1: float) -> float:
    """Relative jump (d_np1 - d_n) / d_n.

    Zero guards: a dead-flat sequence that suddenly moves is exactly the
    anomaly to catch, so 0 -> positive returns +inf (beats any threshold);
    0 -> 0 returns the benign 0.
    """
    if d_n < EPS_ZERO:
        if d_np1 < EPS_ZERO:
            return 0.0
        return math.inf
    return (d_np1 - d_n) / d_n


def compute_variance_ratio(window, d_np1: float) -> float:
    """Sample variance of the window shifted to include d_np1, over the
    sample variance of the window as-is. Constant/constant returns the
    benign 1; variance appearing from an exactly flat window returns +inf.
    """
    w = np.asarray(window, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise ValueError("variance ratio needs a window of at least 2 values")
    var_old = float(np.var(w, ddof=1))
    shifted = np.empty_like(w)
    shifted[:-1] = w[1:]
    shifted[-1] = d_np1
    var_new = float(np.var(shifted, ddof=1))
    if var_old < EPS_ZERO:
        if var_new < EPS_ZERO:
            return 1.0
        return math.inf
    return var_new / var_old


def _updated(tau: float, indicator: float, cfg: DetectorConfig) -> float:
    return tau * cfg.gamma_up if indicator > tau else tau * cfg.gamma_down


class Detector:
    """Stateful detector: feed difference values in step order via observe().

    The first window_p + 1 values are warm-up: they fill the window and
    neither flags nor threshold updates happen. Afterwards each new value
    yields a verdict. On a flagged step the thresholds are left untouched;
    otherwise each one is updated against its own indicator. The new value is
    pushed into the window either way, so later verdicts have a defined
    window even right after a flag.
    """

    def __init__(self, config: DetectorConfig | None = None):
        self.config = config or DetectorConfig()
        self.tau_j = self.config.tau_j0
        self.tau_v = self.config.tau_v0
        self.window = DifferenceWindow(self.config.window_p + 1)

    @property
    def warmed_up(self) -> bool:
        return self.window.is_full

    def reset(self) -> None:
        """Restore initial thresholds and clear the window (per-trial reinit)."""
        self.tau_j = self.config.tau_j0
        self.tau_v = self.config.tau_v0
        self.window.clear()

    def observe(self, d_np1: float) -> DetectorVerdict:
        d = float(d_np1)
        if not math.isfinite(d):
            # Non-finite values must be flagged upstream, never fed here.
            raise NonFiniteValueError(f"non-finite difference value {d!r}")
        if not self.warmed_up:
            self.window.push(d)
            return DetectorVerdict(False, None, None, (self.tau_j, self.tau_v))

        j = compute_jump(self.window.newest(), d)
        v = compute_variance_ratio(self.window.values(), d)
        mode = self.config.mode
        if mode == "both":
            flagged = j > self.tau_j and v > self.tau_v
        elif mode == "jump-only":
            flagged = j > self.tau_j
        else:
            flagged = v > self.tau_v

        if not flagged:
            self.tau_j = _updated(self.tau_j, j, self.config)
            self.tau_v = _updated(self.tau_v, v, self.config)
        self.window.push(d)
        return DetectorVerdict(flagged, j, v, (self.tau_j, self.tau_v))

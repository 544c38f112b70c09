"""Stock problems, scheme registry, and experiment defaults.

Problem identifiers
    vdp-b2, vdp-b3        van der Pol oscillator (damping 2 or 3) on [0, 14],
                          reduced to the first-order system (u, u'); the
                          default step depends on the scheme family.
    heat-cfg1..heat-cfg3  three heat-equation setups with distinct source
                          terms, initial profiles, and grids; each carries a
                          small menu of stock time steps.
    ns-re2000, ns-re20    driven cavity at Re 2000 / 20, 40x40 cells,
                          dt = 1/100, t_end = 2.

Scheme identifiers
    rk45, rk23, rk-midpoint-euler    embedded Runge-Kutta pairs
    ab23, ab45                       Adams-Bashforth pairs (aux, base orders)
    am-ab:<p>                        Adams-Moulton base, same-order AB check
    extrapolation1[:<rk-id>]         RK base checked by order-1 extrapolation
    fe-be, r-cn                      heat-equation pairs
    ns                               cavity projection + extrapolation check

Each (problem, scheme, fault mode) combination that the experiment suite
exercises ships a stock corruption variance; anything else needs an explicit
sigma2.
"""

from __future__ import annotations

import math
from functools import partial

import numpy as np

from .core import ConfigError, SchemePair
from .ode_pairs import (
    BOGACKI_SHAMPINE_23,
    FEHLBERG_45,
    MIDPOINT_EULER,
    AbPair,
    AmAbPair,
    ExtrapolationPair,
    OdeProblem,
    RkPair,
    RkTableau,
)
from .pde_heat import FeBePair, HeatProblem, RichardsonCnPair
from .pde_ns import NsPair, NsProblem

__all__ = [
    "PROBLEMS",
    "SCHEMES",
    "build_pair",
    "default_scheme",
    "default_dt",
    "default_fault_mode",
    "default_sigma2",
    "scheme_family",
    "heat_problem",
    "vdp_problem",
    "ns_problem",
]


# --- van der Pol ------------------------------------------------------------

def _vdp_f(t, u, b):
    return np.array([u[1], b * (1.0 - u[0] ** 2) * u[1] - u[0]])


def _vdp_jac(t, u, b):
    return np.array([[0.0, 1.0], [-2.0 * b * u[0] * u[1] - 1.0, b * (1.0 - u[0] ** 2)]])


VDP_PRESETS = {
    "vdp-b2": {"b": 2.0, "t_end": 14.0, "dt_rk": 1 / 10, "dt_lmm": 1 / 20},
    "vdp-b3": {"b": 3.0, "t_end": 14.0, "dt_rk": 1 / 15, "dt_lmm": 1 / 35},
}


def vdp_problem(problem_id: str, dt: float) -> OdeProblem:
    from .core import TimeGrid

    preset = VDP_PRESETS[problem_id]
    steps = preset["t_end"] / dt
    if abs(steps - round(steps)) > 1e-9 * steps:
        raise ConfigError(f"t_end={preset['t_end']} must be a multiple of dt={dt}")
    return OdeProblem(
        f=partial(_vdp_f, b=preset["b"]),
        u0=np.array([1.0, 0.0]),
        grid=TimeGrid(0.0, dt, round(steps)),
        jac=partial(_vdp_jac, b=preset["b"]),
    )


# --- heat equation ----------------------------------------------------------

def _heat1_q(x, t):
    return x * math.exp(-t / 2.0)


def _heat1_v(x):
    return 4.0 * x * (x - 1.0) * (x - 2.0)


def _heat2_q(x, t):
    # Closed form of (1 - sqrt(1 - 4(t - t^2))) / (2 - 2t); the radical is
    # |1 - 2t|, so the expression is t/(1-t) below t = 1/2 and 1 from there
    # on, which removes the 0/0 at t = 1.
    val = t / (1.0 - t) if t < 0.5 else 1.0
    return np.full_like(np.asarray(x, dtype=float), val)


def _heat2_v(x):
    return 6.0 * np.abs(x - 0.5) - 3.0


def _heat3_q(x, t):
    return 0.1 * (math.sin(2.0 * math.pi * t) + np.cos(2.0 * math.pi * x))


def _heat3_v(x):
    return x * (x - 1.0)


HEAT_PRESETS = {
    "heat-cfg1": {
        "k": 1 / 100,
        "q": _heat1_q,
        "v": _heat1_v,
        "dx": 1 / 100,
        "t_end": 2.0,
        "dt_options": (1 / 60, 1 / 100, 1 / 140),
        "dt_default": 1 / 100,
        "fault_mode": "derivative-eval",
    },
    "heat-cfg2": {
        "k": 1 / 1000,
        "q": _heat2_q,
        "v": _heat2_v,
        "dx": 1 / 200,
        "t_end": 1.0,
        "dt_options": (1 / 100, 1 / 200, 1 / 400),
        "dt_default": 1 / 200,
        "fault_mode": "linear-rhs",
    },
    "heat-cfg3": {
        "k": 1 / 100,
        "q": _heat3_q,
        "v": _heat3_v,
        "dx": 1 / 160,
        "t_end": 2.0,
        "dt_options": (1 / 100, 1 / 160, 1 / 200),
        "dt_default": 1 / 160,
        "fault_mode": "previous-solution",
    },
}


def heat_problem(problem_id: str, dt: float | None = None) -> HeatProblem:
    preset = HEAT_PRESETS[problem_id]
    return HeatProblem(
        k=preset["k"],
        q=preset["q"],
        v=preset["v"],
        dx=preset["dx"],
        dt=preset["dt_default"] if dt is None else dt,
        t_end=preset["t_end"],
    )


# --- driven cavity ----------------------------------------------------------

NS_PRESETS = {
    "ns-re2000": {"reynolds": 2000.0, "fault_mode": "previous-solution"},
    "ns-re20": {"reynolds": 20.0, "fault_mode": "linear-rhs"},
}


def ns_problem(problem_id: str, dt: float | None = None) -> NsProblem:
    preset = NS_PRESETS[problem_id]
    return NsProblem(
        reynolds=preset["reynolds"],
        n_cells=40,
        dt=1 / 100 if dt is None else dt,
        t_end=2.0,
    )


PROBLEMS = tuple(VDP_PRESETS) + tuple(HEAT_PRESETS) + tuple(NS_PRESETS)

_RK_TABLEAUS: dict[str, RkTableau] = {
    "rk45": FEHLBERG_45,
    "rk23": BOGACKI_SHAMPINE_23,
    "rk-midpoint-euler": MIDPOINT_EULER,
}

SCHEMES = (
    "rk45",
    "rk23",
    "rk-midpoint-euler",
    "ab23",
    "ab45",
    "am-ab:<p>",
    "extrapolation1",
    "fe-be",
    "r-cn",
    "ns",
)


def scheme_family(scheme_id: str) -> str:
    if scheme_id in _RK_TABLEAUS or scheme_id.startswith("extrapolation1"):
        return "rk"
    if scheme_id in ("ab23", "ab45") or scheme_id.startswith("am-ab:"):
        return "lmm"
    if scheme_id in ("fe-be", "r-cn"):
        return "heat"
    if scheme_id == "ns":
        return "ns"
    raise ConfigError(f"unknown scheme {scheme_id!r}; known: {', '.join(SCHEMES)}")


def default_scheme(problem_id: str) -> str:
    if problem_id in VDP_PRESETS:
        return "rk45"
    if problem_id in HEAT_PRESETS:
        return "fe-be"
    if problem_id in NS_PRESETS:
        return "ns"
    raise ConfigError(f"unknown problem {problem_id!r}; known: {', '.join(PROBLEMS)}")


def default_dt(problem_id: str, scheme_id: str) -> float:
    if problem_id in VDP_PRESETS:
        key = "dt_rk" if scheme_family(scheme_id) == "rk" else "dt_lmm"
        return VDP_PRESETS[problem_id][key]
    if problem_id in HEAT_PRESETS:
        return HEAT_PRESETS[problem_id]["dt_default"]
    if problem_id in NS_PRESETS:
        return 1 / 100
    raise ConfigError(f"unknown problem {problem_id!r}")


def default_fault_mode(problem_id: str) -> str:
    if problem_id in VDP_PRESETS:
        return "derivative-eval"
    if problem_id in HEAT_PRESETS:
        return HEAT_PRESETS[problem_id]["fault_mode"]
    if problem_id in NS_PRESETS:
        return NS_PRESETS[problem_id]["fault_mode"]
    raise ConfigError(f"unknown problem {problem_id!r}")


# Stock corruption variances for the combinations the experiment suite runs.
_SIGMA2_DEFAULTS: dict[tuple[str, str, str], float] = {
    ("heat-cfg1", "fe-be", "derivative-eval"): 1e-1,
    ("heat-cfg1", "r-cn", "derivative-eval"): 1e-3,
    ("heat-cfg2", "fe-be", "linear-rhs"): 5e-5,
    ("heat-cfg2", "r-cn", "linear-rhs"): 1e-6,
    ("heat-cfg3", "fe-be", "previous-solution"): 1e-4,
    ("heat-cfg3", "r-cn", "previous-solution"): 1e-6,
    ("ns-re2000", "ns", "previous-solution"): 5e-1,
    ("ns-re20", "ns", "linear-rhs"): 2.0,
}


def default_sigma2(problem_id: str, scheme_id: str, mode: str) -> float | None:
    if problem_id in VDP_PRESETS and mode in ("derivative-eval", "previous-solution"):
        return 1e-1
    return _SIGMA2_DEFAULTS.get((problem_id, scheme_id, mode))


def build_pair(problem_id: str, scheme_id: str | None = None, dt: float | None = None) -> SchemePair:
    """Construct a trial driver for a (problem, scheme) combination."""
    if scheme_id is None:
        scheme_id = default_scheme(problem_id)
    family = scheme_family(scheme_id)

    if problem_id in VDP_PRESETS:
        if family not in ("rk", "lmm"):
            raise ConfigError(f"scheme {scheme_id!r} does not apply to ODE problems")
        dt = dt if dt is not None else default_dt(problem_id, scheme_id)
        problem = vdp_problem(problem_id, dt)
        if scheme_id in _RK_TABLEAUS:
            return RkPair(problem, _RK_TABLEAUS[scheme_id])
        if scheme_id == "ab23":
            return AbPair(problem, 2, 3)
        if scheme_id == "ab45":
            return AbPair(problem, 4, 5)
        if scheme_id.startswith("am-ab:"):
            try:
                order = int(scheme_id.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad order in scheme id {scheme_id!r}") from None
            return AmAbPair(problem, order)
        if scheme_id.startswith("extrapolation1"):
            _, _, base = scheme_id.partition(":")
            tableau = _RK_TABLEAUS[base] if base else FEHLBERG_45
            return ExtrapolationPair(problem, tableau)
        raise ConfigError(f"unknown scheme {scheme_id!r}")

    if problem_id in HEAT_PRESETS:
        if family != "heat":
            raise ConfigError(f"scheme {scheme_id!r} does not apply to heat problems")
        problem = heat_problem(problem_id, dt)
        return FeBePair(problem) if scheme_id == "fe-be" else RichardsonCnPair(problem)

    if problem_id in NS_PRESETS:
        if family != "ns":
            raise ConfigError(f"scheme {scheme_id!r} does not apply to cavity problems")
        return NsPair(ns_problem(problem_id, dt))

    raise ConfigError(f"unknown problem {problem_id!r}; known: {', '.join(PROBLEMS)}")

"""stepguard: silent-error detection for ODE/PDE time steppers.

Run a cheap auxiliary scheme alongside the trusted base scheme each step,
monitor the norm of their difference, and flag steps where the difference
sequence jumps against its own recent behavior. Includes a fault-injection
harness for measuring detection rates against corruption of known impact.
"""

from .core import (
    ConfigError,
    DifferenceWindow,
    NonFiniteValueError,
    SchemePair,
    SolverError,
    StepOutput,
    TimeGrid,
    difference_norm,
    state_is_finite,
)
from .detector import (
    Detector,
    DetectorConfig,
    DetectorVerdict,
    compute_jump,
    compute_variance_ratio,
)
from .faults import (
    FAULT_MODES,
    FaultSpec,
    LteNormalizedError,
    ResolvedFault,
    corrupt,
    lte_normalized_error,
    make_rng,
    resolve_fault,
)
from .harness import (
    EnsembleConfig,
    ExperimentSummary,
    TrialRecord,
    emit_outputs,
    kernel_regression,
    run_ablation,
    run_experiment,
    run_trial,
    silverman_bandwidth,
    simulate,
    simulate_ensemble,
    summarize,
)
from .ode_pairs import (
    AbPair,
    AmAbPair,
    ExtrapolationPair,
    LmmHistory,
    NewtonConfig,
    OdeProblem,
    RkPair,
    RkTableau,
    ab_pair_step,
    am_base_ab_aux_step,
    bootstrap_history,
    extrapolation_aux,
    rk_pair_step,
)
from .pde_heat import (
    FeBePair,
    HeatProblem,
    RichardsonCnPair,
    TridiagonalSystem,
    fe_be_pair_step,
    richardson_cn_pair_step,
    solve_tridiagonal,
)
from .pde_ns import NsFields, NsPair, NsProblem, divergence, ns_pair_step, projection_step
from . import presets

__version__ = "0.1.0"

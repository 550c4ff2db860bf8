"""Bi-level optimization toolkit.

Unbiased forward-gradient hypergradients via tangent-carrying unrolling, a
zeroth-order variant for black-box inner solvers, the classical exact and
biased baselines (forward/reverse unrolling, truncation, Neumann implicit
function, Hessian-free), oracle problems, and a verification harness.
"""

from .core import (
    DirectionBatch,
    Distribution,
    Rng,
    derive_seed,
    fd_gradient,
    sample_directions,
    step_seed,
)
from .errors import (
    BloError,
    ConfigError,
    DivergenceError,
    InvalidArgument,
    NeumannDivergence,
    NotDifferentiable,
    OracleTooLarge,
    ReplayMismatch,
)
from .estimators import (
    GradientEstimate,
    VarianceReport,
    fg2u_estimate,
    fg2u_zo_estimate,
    hessian_free_estimate,
    neumann_if_estimate,
    neumann_ihvp,
    validate_variance,
    vr_estimate,
)
from .meta_opt import (
    EstimatorSettings,
    MetaOptimizer,
    Phase,
    PhaseSchedule,
    RunRecord,
    RunRow,
    TrainingDiverged,
    estimate_smoothness,
    meta_step,
    one_estimate,
    run_training,
    variance_adjusted_step_size,
)
from .problems import (
    BilevelProblem,
    DistillationProblem,
    PdeDiscoveryProblem,
    QuadraticBilevel,
    fd_transition_jvp,
    pde_solve,
    quadratic_true_hypergradient,
)
from .unroll import (
    TangentBundle,
    Trajectory,
    fgu_full,
    float_accounting,
    rgu_backward,
    trgu,
    unroll,
    unroll_with_tangents,
)

__version__ = "0.1.0"

from .base import BilevelProblem, fd_transition_jvp
from .distillation import DistillationProblem
from .pde import (
    EQUATIONS,
    INIT_RANGE,
    TRUE_COEFFICIENT,
    PdeDiscoveryProblem,
    observation_indices,
    pde_solve,
)
from .quadratic import QuadraticBilevel, quadratic_true_hypergradient

__all__ = [
    "BilevelProblem",
    "DistillationProblem",
    "PdeDiscoveryProblem",
    "QuadraticBilevel",
    "EQUATIONS",
    "INIT_RANGE",
    "TRUE_COEFFICIENT",
    "fd_transition_jvp",
    "observation_indices",
    "pde_solve",
    "quadratic_true_hypergradient",
]

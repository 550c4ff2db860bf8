"""The bi-level problem contract consumed by every estimator.

A problem owns the outer objective f, the inner transition dynamics, and all
derivative oracles. Instances are immutable and every operation is a pure
function of its seed arguments, so problems can be shared freely across
threads.

Notation used throughout (all derivatives are row-vector convention):
    d_T = df/dtheta_T,  c_T = df/dphi,
    A_t = dOmega_t/dtheta,  B_t = dOmega_t/dphi,
    Z_t = dtheta_t/dphi  (propagated only as tangents Z_t v).
"""

from __future__ import annotations

import numpy as np

from ..core import step_seed
from ..errors import DivergenceError, NotDifferentiable


class BilevelProblem:
    """Abstract contract; differentiable problems override the oracles below.

    Black-box problems (a non-differentiable inner solver) override only
    ``black_box_h`` and leave everything else raising NotDifferentiable.
    """

    n_meta: int
    n_inner: int

    # ---- zeroth-order surface -------------------------------------------------

    def meta_loss(self, theta: np.ndarray, phi: np.ndarray) -> float:
        """f(theta, phi)."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose meta_loss")

    def inner_init(self, phi: np.ndarray) -> np.ndarray:
        """Omega_0(phi)."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose inner_init")

    def transition(self, theta: np.ndarray, phi: np.ndarray, t: int, seed: int) -> np.ndarray:
        """Omega_t(theta, phi); bit-identical on replay of (theta, phi, t, seed)."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose transition")

    def black_box_h(self, phi: np.ndarray, T: int, run_seed: int) -> float:
        """h(phi) evaluated end to end with the seeded step sequence.

        The default runs the same T-step recursion as the unroll engine
        (shared step_seed derivation), so difference quotients of h see
        common random numbers with the analytic path.
        """
        theta = self.inner_init(phi)
        for t in range(1, T + 1):
            theta = self.transition(theta, phi, t, step_seed(run_seed, t))
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(
                    f"inner iterate non-finite at step {t}", step=t, norm=float(np.linalg.norm(theta[np.isfinite(theta)]))
                )
        return float(self.meta_loss(theta, phi))

    # ---- first/second-order oracles -------------------------------------------

    def partial_f_theta(self, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """d_T = df/dtheta (length M)."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose partial_f_theta")

    def partial_f_phi(self, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """c_T = df/dphi (length N)."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose partial_f_phi")

    def init_jvp(self, phi: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Z_0 v = (dOmega_0/dphi) v; zero for phi-independent initialization."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose init_jvp")

    def transition_jvp(
        self, theta: np.ndarray, phi: np.ndarray, t: int, seed: int, y: np.ndarray, v: np.ndarray
    ) -> np.ndarray:
        """A_t y + B_t v with Jacobians evaluated at (theta, phi) = (theta_{t-1}, phi)."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose transition_jvp")

    def transition_vjp(
        self, theta: np.ndarray, phi: np.ndarray, t: int, seed: int, d: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """(d A_t, d B_t) for a row vector d."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose transition_vjp")

    def g_hvp(self, theta: np.ndarray, phi: np.ndarray, u: np.ndarray) -> np.ndarray:
        """(d^2 g / dtheta^2) u."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose g_hvp")

    def g_cross_vjp(self, theta: np.ndarray, phi: np.ndarray, r: np.ndarray) -> np.ndarray:
        """r (d^2 g / dtheta dphi), an N-vector."""
        raise NotDifferentiable(f"{type(self).__name__} does not expose g_cross_vjp")

    # ---- experiment helpers ----------------------------------------------------

    def initial_phi(self, seed: int) -> np.ndarray:
        """A reasonable random starting meta parameter for training runs."""
        raise NotImplementedError

    def supports_jvp(self) -> bool:
        try:
            probe = np.zeros(self.n_meta)
            self.init_jvp(probe, probe)
        except NotDifferentiable:
            return False
        except Exception:
            return True
        return True


def fd_transition_jvp(
    problem: BilevelProblem,
    theta: np.ndarray,
    phi: np.ndarray,
    t: int,
    seed: int,
    y: np.ndarray,
    v: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Finite-difference-of-transitions fallback for validating transition_jvp."""
    hi = problem.transition(theta + eps * y, phi + eps * v, t, seed)
    lo = problem.transition(theta - eps * y, phi - eps * v, t, seed)
    return (hi - lo) / (2.0 * eps)

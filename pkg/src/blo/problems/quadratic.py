"""Strongly convex quadratic bi-level instance with every oracle in closed form.

Inner objective  g(theta, phi) = 1/2 theta^T A theta - theta^T B phi
Outer objective  f(theta, phi) = 1/2 ||theta - theta*||^2 + (ridge/2) ||phi||^2
Inner dynamics   gradient descent: theta <- theta - eta (A theta - B phi)

With A symmetric positive definite and eta < 2 / lambda_max(A) the inner map
contracts to theta = A^{-1} B phi, h(phi) is an exact quadratic, and the true
hypergradient is available from a dense matrix recursion. This is the oracle
instance behind most of the verification suites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import as_vector
from ..errors import InvalidArgument
from .base import BilevelProblem


@dataclass(frozen=True, eq=False)
class QuadraticBilevel(BilevelProblem):
    a_matrix: np.ndarray       # (M, M) symmetric positive definite
    b_matrix: np.ndarray       # (M, N)
    theta_star: np.ndarray     # (M,)
    eta: float                 # inner step size, < 2 / lambda_max(A)
    ridge: float = 0.0         # weight of the explicit phi term in f
    theta_init: np.ndarray | None = None   # constant Omega_0; zeros if omitted

    alpha: float = field(init=False)       # lambda_min(A): strong-convexity constant
    lambda_max: float = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=np.float64)
        b = np.asarray(self.b_matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgument("A must be square")
        if not np.allclose(a, a.T, atol=1e-12):
            raise InvalidArgument("A must be symmetric")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise InvalidArgument("B must be M x N")
        eigvals = np.linalg.eigvalsh(a)
        if eigvals[0] <= 0:
            raise InvalidArgument("A must be positive definite")
        if not 0 < self.eta < 2.0 / eigvals[-1]:
            raise InvalidArgument(f"eta must lie in (0, {2.0 / eigvals[-1]:.6g}) for contraction")
        if self.ridge < 0:
            raise InvalidArgument("ridge must be >= 0")
        theta0 = np.zeros(a.shape[0]) if self.theta_init is None else as_vector(self.theta_init, a.shape[0], "theta_init")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_matrix", b)
        object.__setattr__(self, "theta_star", as_vector(self.theta_star, a.shape[0], "theta_star"))
        object.__setattr__(self, "theta_init", theta0)
        object.__setattr__(self, "alpha", float(eigvals[0]))
        object.__setattr__(self, "lambda_max", float(eigvals[-1]))

    @property
    def n_inner(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def n_meta(self) -> int:
        return self.b_matrix.shape[1]

    # ---- objectives and dynamics ----

    def meta_loss(self, theta, phi) -> float:
        diff = theta - self.theta_star
        return 0.5 * float(diff @ diff) + 0.5 * self.ridge * float(phi @ phi)

    def inner_init(self, phi):
        return self.theta_init.copy()

    def inner_grad(self, theta, phi):
        return self.a_matrix @ theta - self.b_matrix @ phi

    def transition(self, theta, phi, t, seed):
        return theta - self.eta * self.inner_grad(theta, phi)

    # ---- first-order oracles ----

    def partial_f_theta(self, theta, phi):
        return theta - self.theta_star

    def partial_f_phi(self, theta, phi):
        return self.ridge * phi

    def init_jvp(self, phi, v):
        return np.zeros(self.n_inner)

    def transition_jvp(self, theta, phi, t, seed, y, v):
        return y - self.eta * (self.a_matrix @ y - self.b_matrix @ v)

    def transition_vjp(self, theta, phi, t, seed, d):
        return d - self.eta * (self.a_matrix @ d), self.eta * (self.b_matrix.T @ d)

    # ---- second-order oracles ----

    def g_hvp(self, theta, phi, u):
        return self.a_matrix @ u

    def g_cross_vjp(self, theta, phi, r):
        # d^2 g / dtheta dphi = -B
        return -(self.b_matrix.T @ r)

    # ---- helpers ----

    def initial_phi(self, seed: int) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        return gen.standard_normal(self.n_meta)

    @staticmethod
    def random(
        m: int,
        n: int,
        seed: int,
        cond: float = 10.0,
        eta: float | None = None,
        ridge: float = 0.1,
    ) -> "QuadraticBilevel":
        """Random instance with eigenvalues of A spread over [1, cond]."""
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        q, _ = np.linalg.qr(gen.standard_normal((m, m)))
        eigs = np.linspace(1.0, cond, m)
        a = q @ np.diag(eigs) @ q.T
        a = 0.5 * (a + a.T)
        b = gen.standard_normal((m, n))
        theta_star = gen.standard_normal(m)
        theta_init = gen.standard_normal(m)
        if eta is None:
            eta = 1.0 / cond  # comfortably inside (0, 2/lambda_max)
        return QuadraticBilevel(a, b, theta_star, eta=eta, ridge=ridge, theta_init=theta_init)


def quadratic_true_hypergradient(problem: QuadraticBilevel, phi: np.ndarray, T: int) -> np.ndarray:
    """Exact grad h via the dense matrix recursion Z_t = (I - eta A) Z_{t-1} + eta B.

    Oracle use only: forms the M x N Jacobian explicitly. Independent of the
    per-direction tangent code path, which is the point.
    """
    phi = as_vector(phi, problem.n_meta, "phi")
    m, n = problem.n_inner, problem.n_meta
    contraction = np.eye(m) - problem.eta * problem.a_matrix
    z = np.zeros((m, n))
    theta = problem.inner_init(phi)
    for _ in range(T):
        z = contraction @ z + problem.eta * problem.b_matrix
        theta = contraction @ theta + problem.eta * (problem.b_matrix @ phi)
    d_t = problem.partial_f_theta(theta, phi)
    c_t = problem.partial_f_phi(theta, phi)
    return d_t @ z + c_t

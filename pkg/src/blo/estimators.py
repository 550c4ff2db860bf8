"""The hypergradient-estimator family.

First-order estimators propagate directional tangents through the unrolled
inner problem and project onto the sampled directions ("forward gradient"):
unbiased whenever E[v v^T] = I. The zeroth-order variant replaces the tangent
with a finite-difference quotient of the black-box outer loss. The
implicit-function family trades unrolling for (approximate) inverse-Hessian
vector products at the reached inner point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import Distribution, DirectionBatch, derive_seed, sample_directions, step_seed
from .errors import InvalidArgument, NeumannDivergence, NotDifferentiable
from .parallel import ordered_map
from .problems.base import BilevelProblem
from .unroll import TangentBundle, _check_finite, fgu_full, unroll_with_tangents

_ZEROTH_ORDER_TAGS = frozenset({"fg2u_zo"})


@dataclass(frozen=True)
class GradientEstimate:
    """An estimated hypergradient plus the metadata needed to replay it."""

    grad: np.ndarray
    estimator: str
    b: int
    T: int
    mu: float | None
    wall_seconds: float
    directions_seed: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise InvalidArgument("gradient estimate contains non-finite entries")
        is_zo = self.estimator in _ZEROTH_ORDER_TAGS
        if is_zo != (self.mu is not None):
            raise InvalidArgument("mu must be present exactly for zeroth-order estimators")


@dataclass(frozen=True)
class VarianceReport:
    """Empirical check of the Rademacher variance identity
    E||grad_hat - grad||^2 = ((N-1)/b) ||grad||^2."""

    n_samples: int
    empirical_mse: float
    true_grad_norm_sq: float
    predicted_ratio: float
    empirical_ratio: float


def _directional_scalars(
    problem: BilevelProblem,
    phi: np.ndarray,
    T: int,
    run_seed: int,
    dirs: DirectionBatch,
    threads: int = 1,
    skip_steps: int = 0,
) -> np.ndarray:
    """w_i = d_T (Z_T v_i) + c_T v_i for each direction.

    skip_steps > 0 truncates the tangent recursion: the initialization term
    and the per-step contributions of the first skip_steps steps are dropped
    (the tangent is identically zero until then), which is the cheap biased
    baseline used by the truncated variance-reduction form.
    """
    if skip_steps == 0:
        bundle = unroll_with_tangents(problem, phi, T, run_seed, dirs, threads=threads)
    else:
        bundle = _unroll_with_truncated_tangents(problem, phi, T, run_seed, dirs, skip_steps, threads)
    d_t = problem.partial_f_theta(bundle.theta, phi)
    c_t = problem.partial_f_phi(bundle.theta, phi)
    return bundle.tangents @ d_t + dirs.directions @ c_t


def _unroll_with_truncated_tangents(problem, phi, T, run_seed, dirs, skip_steps, threads):
    if not 0 <= skip_steps <= T:
        raise InvalidArgument(f"skip_steps must lie in [0, {T}]")
    theta = problem.inner_init(phi)
    _check_finite(theta, 0)
    tangents = np.zeros((dirs.b, problem.n_inner))
    for t in range(1, T + 1):
        seed_t = step_seed(run_seed, t)
        theta_prev = theta
        theta = problem.transition(theta_prev, phi, t, seed_t)
        _check_finite(theta, t)
        if t >= skip_steps:
            def update(j: int, _theta=theta_prev, _t=t, _seed=seed_t):
                return problem.transition_jvp(_theta, phi, _t, _seed, tangents[j], dirs.directions[j])

            tangents = np.asarray(ordered_map(update, range(dirs.b), threads=threads))
    return TangentBundle(theta=theta, tangents=tangents, directions=dirs)


def fg2u_estimate(
    problem: BilevelProblem,
    phi: np.ndarray,
    T: int,
    run_seed: int,
    dirs: DirectionBatch,
    threads: int = 1,
) -> GradientEstimate:
    """Unbiased forward-gradient estimate (1/b) sum_i w_i v_i.

    w_i is the exact directional derivative of h along v_i, obtained from the
    tangent-carrying unroll, so the only stochasticity is the directions.
    """
    start = time.perf_counter()
    if not problem.supports_jvp():
        raise NotDifferentiable(
            "problem exposes no jvp oracles; use fg2u_zo_estimate for black-box problems"
        )
    w = _directional_scalars(problem, phi, T, run_seed, dirs, threads=threads)
    grad = (dirs.directions.T @ w) / dirs.b
    return GradientEstimate(
        grad=grad, estimator="fg2u", b=dirs.b, T=T, mu=None,
        wall_seconds=time.perf_counter() - start, directions_seed=dirs.base_seed,
    )


def fg2u_zo_estimate(
    problem: BilevelProblem,
    phi: np.ndarray,
    T: int,
    run_seed: int,
    dirs: DirectionBatch,
    mu: float,
    threads: int = 1,
) -> GradientEstimate:
    """Zeroth-order variant: forward-difference quotients of the black-box loss.

    One perturbed evaluation per direction plus a single shared base
    evaluation, every run under the same run_seed (common random numbers);
    the one-sided quotient buys an O(mu) bias for first-order-free operation.
    """
    start = time.perf_counter()
    if not mu > 0:
        raise InvalidArgument("mu must be positive")
    base = problem.black_box_h(phi, T, run_seed)

    def perturbed(j: int) -> float:
        return problem.black_box_h(phi + mu * dirs.directions[j], T, run_seed)

    values = ordered_map(perturbed, range(dirs.b), threads=threads)
    w = (np.asarray(values) - base) / mu
    grad = (dirs.directions.T @ w) / dirs.b
    return GradientEstimate(
        grad=grad, estimator="fg2u_zo", b=dirs.b, T=T, mu=float(mu),
        wall_seconds=time.perf_counter() - start, directions_seed=dirs.base_seed,
    )


def neumann_ihvp(
    problem: BilevelProblem,
    theta: np.ndarray,
    phi: np.ndarray,
    d: np.ndarray,
    alpha: float,
    K: int,
) -> np.ndarray:
    """Truncated Neumann approximation of d H^{-1}: alpha * sum_{k<=K} d (I - alpha H)^k.

    Vector-only: each term costs one Hessian-vector product. Requires
    alpha < 1/lambda_max(H) to contract; blow-up past 1e6x the initial norm
    raises NeumannDivergence.
    """
    if not alpha > 0:
        raise InvalidArgument("alpha must be positive")
    if K < 0:
        raise InvalidArgument("K must be >= 0")
    r = np.array(d, dtype=np.float64)
    acc = r.copy()
    limit = 1e6 * max(float(np.linalg.norm(r)), 1e-300)
    for _ in range(K):
        r = r - alpha * problem.g_hvp(theta, phi, r)
        if float(np.linalg.norm(r)) > limit:
            raise NeumannDivergence("Neumann iterate growing; alpha too large for this Hessian")
        acc += r
    return alpha * acc


def neumann_if_estimate(
    problem: BilevelProblem,
    theta_t: np.ndarray,
    phi: np.ndarray,
    alpha: float,
    K: int,
) -> GradientEstimate:
    """Implicit-function estimate -(d H^{-1}) Y + c with the iHVP from a
    truncated Neumann series. Exact only at an inner optimum; the truncation
    and the unconverged inner point are the two documented bias sources."""
    start = time.perf_counter()
    d = problem.partial_f_theta(theta_t, phi)
    c = problem.partial_f_phi(theta_t, phi)
    ihvp = neumann_ihvp(problem, theta_t, phi, d, alpha, K)
    grad = -problem.g_cross_vjp(theta_t, phi, ihvp) + c
    return GradientEstimate(
        grad=grad, estimator="neumann_if", b=0, T=0, mu=None,
        wall_seconds=time.perf_counter() - start,
    )


def hessian_free_estimate(
    problem: BilevelProblem,
    theta_t: np.ndarray,
    phi: np.ndarray,
    alpha: float = 1.0,
) -> GradientEstimate:
    """Implicit-function estimate with the inner Hessian replaced by I/alpha:
    grad = -alpha (d Y) + c. Cheapest and most biased of the family."""
    start = time.perf_counter()
    d = problem.partial_f_theta(theta_t, phi)
    c = problem.partial_f_phi(theta_t, phi)
    grad = -alpha * problem.g_cross_vjp(theta_t, phi, d) + c
    return GradientEstimate(
        grad=grad, estimator="hessian_free", b=0, T=0, mu=None,
        wall_seconds=time.perf_counter() - start,
    )


def vr_estimate(
    problem: BilevelProblem,
    phi: np.ndarray,
    phi_ref: np.ndarray,
    T: int,
    run_seed: int,
    dirs: DirectionBatch,
    truncated_s: int | None = None,
    threads: int = 1,
) -> GradientEstimate:
    """Control-variate forward gradient.

    Per direction the output is

        w_i v_i - [wr_i v_i - (1/b) sum_j wr_j v_j]

    where wr are forward-gradient scalars at the reference point phi_ref,
    computed with a full unroll, or with the first truncated_s step
    contributions dropped when truncated_s is given. The bracket has zero
    mean over the direction distribution, so the batch average stays
    unbiased for grad h(phi).
    """
    start = time.perf_counter()
    if truncated_s is not None and not 0 <= truncated_s <= T:
        raise InvalidArgument(f"truncated_s must lie in [0, {T}]")
    if not problem.supports_jvp():
        raise NotDifferentiable("vr_estimate needs jvp oracles")
    w = _directional_scalars(problem, phi, T, run_seed, dirs, threads=threads)
    skip = truncated_s if truncated_s is not None else 0
    w_ref = _directional_scalars(problem, phi_ref, T, run_seed, dirs, threads=threads, skip_steps=skip)
    v = dirs.directions
    baseline_mean = (v.T @ w_ref) / dirs.b
    per_direction = [w[i] * v[i] - (w_ref[i] * v[i] - baseline_mean) for i in range(dirs.b)]
    grad = np.sum(per_direction, axis=0) / dirs.b
    return GradientEstimate(
        grad=grad, estimator="vr", b=dirs.b, T=T, mu=None,
        wall_seconds=time.perf_counter() - start, directions_seed=dirs.base_seed,
    )


def validate_variance(
    problem: BilevelProblem,
    phi: np.ndarray,
    T: int,
    b: int,
    n_samples: int,
    seed: int = 0,
    threads: int = 1,
) -> VarianceReport:
    """Monte Carlo check of the Rademacher variance identity.

    The reference gradient comes from the dense forward recursion (an
    independent exact path); each sample runs the actual per-direction
    estimator with fresh directions.
    """
    if n_samples < 1:
        raise InvalidArgument("n_samples must be >= 1")
    run_seed = derive_seed(seed, 0xA0)
    true_grad, _ = fgu_full(problem, phi, T, run_seed)
    norm_sq = float(true_grad @ true_grad)
    n = problem.n_meta
    total = 0.0
    for s in range(n_samples):
        dirs = sample_directions(Distribution.RADEMACHER, n, b, derive_seed(seed, 0xA1, s))
        est = fg2u_estimate(problem, phi, T, run_seed, dirs, threads=threads)
        err = est.grad - true_grad
        total += float(err @ err)
    mse = total / n_samples
    predicted = (n - 1) / b
    empirical = mse / norm_sq if norm_sq > 0 else 0.0
    return VarianceReport(
        n_samples=n_samples,
        empirical_mse=mse,
        true_grad_norm_sq=norm_sq,
        predicted_ratio=predicted,
        empirical_ratio=empirical,
    )

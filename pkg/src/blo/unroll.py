"""The inner-loop engine: plain unrolling, tangent-carrying unrolling,
full-Jacobian forward unrolling, reverse unrolling, and its truncation.

Memory is the whole story here. The tangent recursion

    Z_0 v = (dOmega_0/dphi) v;   Z_t v = A_t (Z_{t-1} v) + B_t v

carries b vectors of length M instead of the M x N Jacobian, and nothing is
kept across steps, so the live footprint is O((b+1)M + bN) independent of T.
Reverse unrolling instead stores the whole trajectory, O(TM). Both facts are
observable through the allocation meter below.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass

import numpy as np

from .core import DirectionBatch, step_seed
from .errors import DivergenceError, InvalidArgument, OracleTooLarge, ReplayMismatch
from .parallel import ordered_map
from .problems.base import BilevelProblem

# ---------------------------------------------------------------------------
# Allocation accounting

_ACTIVE_METER: contextvars.ContextVar["FloatMeter | None"] = contextvars.ContextVar(
    "blo_float_meter", default=None
)


class FloatMeter:
    """Peak count of floats held live by the unroll engine.

    The engine reports the arrays it is actually retaining at each step;
    the meter keeps the running maximum. This is the accounting behind the
    constant-memory contract tests.
    """

    def __init__(self):
        self.peak = 0

    def observe(self, *arrays: np.ndarray) -> None:
        total = sum(int(a.size) for a in arrays)
        if total > self.peak:
            self.peak = total


@contextlib.contextmanager
def float_accounting():
    meter = FloatMeter()
    token = _ACTIVE_METER.set(meter)
    try:
        yield meter
    finally:
        _ACTIVE_METER.reset(token)


def _observe(*arrays: np.ndarray) -> None:
    meter = _ACTIVE_METER.get()
    if meter is not None:
        meter.observe(*arrays)


# ---------------------------------------------------------------------------
# Data carried by the engine


@dataclass(frozen=True)
class Trajectory:
    """Stored inner iterates theta_0..theta_T plus the seeds that produced them.

    Invariant: states[t] == transition(states[t-1], phi_snapshot, t, step_seeds[t-1])
    bit-exactly, for every t.
    """

    states: np.ndarray        # (T+1, M)
    step_seeds: tuple[int, ...]
    phi_snapshot: np.ndarray

    @property
    def depth(self) -> int:
        return self.states.shape[0] - 1


@dataclass(frozen=True)
class TangentBundle:
    """theta_T together with the propagated tangents y_i = Z_T v_i."""

    theta: np.ndarray         # (M,)
    tangents: np.ndarray      # (b, M)
    directions: DirectionBatch

    def __post_init__(self):
        if self.tangents.shape[0] != self.directions.b:
            raise InvalidArgument("one tangent per direction required")


def _check_finite(theta: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(theta)):
        finite = theta[np.isfinite(theta)]
        norm = float(np.linalg.norm(finite)) if finite.size else float("inf")
        raise DivergenceError(f"inner iterate non-finite at step {t}", step=t, norm=norm)


# ---------------------------------------------------------------------------
# Unrolling


def unroll(
    problem: BilevelProblem,
    phi: np.ndarray,
    T: int,
    run_seed: int,
    keep_trajectory: bool = False,
) -> tuple[np.ndarray, Trajectory | None]:
    """Run theta through T seeded transitions; optionally keep all iterates."""
    if T < 0:
        raise InvalidArgument("T must be >= 0")
    theta = problem.inner_init(phi)
    _check_finite(theta, 0)
    seeds = []
    states = [theta] if keep_trajectory else None
    for t in range(1, T + 1):
        seed_t = step_seed(run_seed, t)
        seeds.append(seed_t)
        theta = problem.transition(theta, phi, t, seed_t)
        _check_finite(theta, t)
        if keep_trajectory:
            states.append(theta)
            _observe(*states)
        else:
            _observe(theta)
    if keep_trajectory:
        traj = Trajectory(
            states=np.asarray(states), step_seeds=tuple(seeds), phi_snapshot=np.array(phi, dtype=np.float64)
        )
        _observe(traj.states)
        return theta, traj
    return theta, None


def unroll_with_tangents(
    problem: BilevelProblem,
    phi: np.ndarray,
    T: int,
    run_seed: int,
    dirs: DirectionBatch,
    threads: int = 1,
) -> TangentBundle:
    """Propagate b tangents Z_t v_i alongside a single inner trajectory.

    All tangents share one theta sequence and one step-seed sequence; within
    a step the b updates are independent and may run on a thread pool, with
    results written back in index order so the result is bit-identical for
    any thread count. Live memory is the current theta, the (b, M) tangent
    block, and the (b, N) directions: constant in T.
    """
    if T < 0:
        raise InvalidArgument("T must be >= 0")
    theta = problem.inner_init(phi)
    _check_finite(theta, 0)
    tangents = np.asarray([problem.init_jvp(phi, v) for v in dirs.directions])
    _observe(theta, tangents, dirs.directions)
    for t in range(1, T + 1):
        seed_t = step_seed(run_seed, t)
        theta_prev = theta
        theta = problem.transition(theta_prev, phi, t, seed_t)
        _check_finite(theta, t)

        def update(j: int, _theta=theta_prev, _t=t, _seed=seed_t):
            return problem.transition_jvp(_theta, phi, _t, _seed, tangents[j], dirs.directions[j])

        rows = ordered_map(update, range(dirs.b), threads=threads)
        tangents = np.asarray(rows)
        if not np.all(np.isfinite(tangents)):
            raise DivergenceError(f"tangent non-finite at step {t}", step=t)
        _observe(theta, tangents, dirs.directions)
    return TangentBundle(theta=theta, tangents=tangents, directions=dirs)


def fgu_full(
    problem: BilevelProblem,
    phi: np.ndarray,
    T: int,
    run_seed: int,
    size_cap: int = 4_000_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact hypergradient via the dense forward recursion Z_t = A_t Z_{t-1} + B_t.

    Materializes the full M x N Jacobian (the documented O(MN) cost), so it
    is gated by size_cap and intended for oracle-scale cross-checks only.
    Returns (grad h, Z_T).
    """
    m, n = problem.n_inner, problem.n_meta
    if m * n > size_cap:
        raise OracleTooLarge(f"M*N = {m * n} exceeds cap {size_cap}")
    phi = np.asarray(phi, dtype=np.float64)
    theta = problem.inner_init(phi)
    _check_finite(theta, 0)
    eye = np.eye(n)
    z = np.asarray([problem.init_jvp(phi, eye[j]) for j in range(n)]).T  # (M, N)
    _observe(theta, z)
    for t in range(1, T + 1):
        seed_t = step_seed(run_seed, t)
        theta_prev = theta
        theta = problem.transition(theta_prev, phi, t, seed_t)
        _check_finite(theta, t)
        cols = [problem.transition_jvp(theta_prev, phi, t, seed_t, z[:, j], eye[j]) for j in range(n)]
        z = np.asarray(cols).T
        _observe(theta, z)
    d_t = problem.partial_f_theta(theta, phi)
    c_t = problem.partial_f_phi(theta, phi)
    return d_t @ z + c_t, z


def _reverse_sweep(problem: BilevelProblem, traj: Trajectory, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Run the reverse recursion c_{t-1} = c_t + d_t B_t, d_{t-1} = d_t A_t
    for the last `steps` steps, validating replay along the way.

    Returns (d, c) after the sweep: d = d_{T-steps}, c = c_{T-steps}.
    """
    T = traj.depth
    phi = traj.phi_snapshot
    theta_T = traj.states[T]
    d = problem.partial_f_theta(theta_T, phi)
    c = problem.partial_f_phi(theta_T, phi)
    _observe(traj.states, d, c)
    for t in range(T, T - steps, -1):
        theta_prev = traj.states[t - 1]
        seed_t = traj.step_seeds[t - 1]
        replayed = problem.transition(theta_prev, phi, t, seed_t)
        if not np.array_equal(replayed, traj.states[t]):
            raise ReplayMismatch(f"stored state at step {t} does not replay bit-exactly")
        d_a, d_b = problem.transition_vjp(theta_prev, phi, t, seed_t, d)
        c = c + d_b
        d = d_a
        _observe(traj.states, d, c)
    return d, c


def rgu_backward(problem: BilevelProblem, traj: Trajectory) -> np.ndarray:
    """Exact hypergradient d_0 Z_0 + c_0 from a stored trajectory.

    The Z_0 term is contracted through init_jvp one meta coordinate at a
    time; problems with phi-independent initialization contribute zero.
    """
    d, c = _reverse_sweep(problem, traj, traj.depth)
    phi = traj.phi_snapshot
    n = phi.size
    eye = np.eye(n)
    init_term = np.array([float(d @ problem.init_jvp(phi, eye[j])) for j in range(n)])
    return c + init_term


def trgu(problem: BilevelProblem, traj: Trajectory, s: int) -> np.ndarray:
    """s-step truncated reverse unrolling: returns c_{T-s}, dropping the rest.

    The dropped remainder carries the implicit-gradient information from the
    first T-s steps; under strong inner convexity its size decays like
    (1 - eta*alpha)^s. By definition here, s = T still drops the d_0 Z_0
    term, which is zero anyway for phi-independent initialization.
    """
    if not 0 <= s <= traj.depth:
        raise InvalidArgument(f"s must lie in [0, {traj.depth}]")
    _, c = _reverse_sweep(problem, traj, s)
    return c

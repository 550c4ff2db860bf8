"""The outer loop: meta updates, gradient accumulation, and the two-phase
schedule (cheap biased estimator first, unbiased forward-gradient second).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Distribution, harness_seed, sample_directions
from .errors import DivergenceError, InvalidArgument
from .estimators import (
    GradientEstimate,
    fg2u_estimate,
    fg2u_zo_estimate,
    hessian_free_estimate,
    neumann_if_estimate,
    vr_estimate,
)
from .problems.base import BilevelProblem
from .unroll import rgu_backward, trgu, unroll

ESTIMATOR_TAGS = ("fg2u", "fg2u_zo", "rgu", "trgu", "neumann_if", "hessian_free", "vr")


class MetaOptimizer:
    """Constant-step GD or Adam over the meta parameter.

    Adam uses the standard biased-moment update with beta1 = 0.9,
    beta2 = 0.999, eps = 1e-8; moment vectors start at zero.
    """

    def __init__(self, kind: str = "gd", step_size: float = 0.1,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("gd", "adam"):
            raise InvalidArgument("optimizer kind must be 'gd' or 'adam'")
        if not (np.isfinite(step_size) and step_size > 0):
            raise InvalidArgument("step_size must be finite and positive")
        self.kind = kind
        self.step_size = float(step_size)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = None
        self._v = None
        self._t = 0

    def step(self, phi: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if phi.shape != grad.shape:
            raise InvalidArgument("phi and gradient dimensions differ")
        if self.kind == "gd":
            return phi - self.step_size * grad
        if self._m is None:
            self._m = np.zeros_like(phi)
            self._v = np.zeros_like(phi)
        self._t += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad * grad
        m_hat = self._m / (1.0 - self.beta1**self._t)
        v_hat = self._v / (1.0 - self.beta2**self._t)
        return phi - self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)


def meta_step(opt: MetaOptimizer, phi: np.ndarray, estimate: GradientEstimate) -> np.ndarray:
    """Apply one meta update from a gradient estimate."""
    new_phi = opt.step(np.asarray(phi, dtype=np.float64), estimate.grad)
    if not np.all(np.isfinite(new_phi)):
        raise DivergenceError("meta update produced non-finite phi")
    return new_phi


@dataclass(frozen=True)
class Phase:
    tag: str
    steps: int

    def __post_init__(self):
        if self.tag not in ESTIMATOR_TAGS:
            raise InvalidArgument(f"unknown estimator tag {self.tag!r}")
        if self.steps < 0:
            raise InvalidArgument("phase steps must be >= 0")


@dataclass(frozen=True)
class PhaseSchedule:
    """Phase 1 runs a cheap estimator to warm-start; phase 2 defaults to fg2u."""

    phase1: Phase | None = None
    phase2: Phase = field(default_factory=lambda: Phase("fg2u", 100))

    def phases(self) -> list[Phase]:
        out = []
        if self.phase1 is not None and self.phase1.steps > 0:
            out.append(self.phase1)
        out.append(self.phase2)
        return out


@dataclass
class EstimatorSettings:
    """Shared knobs for every estimator tag; each tag reads the ones it needs."""

    T: int = 10
    b: int = 4
    distribution: Distribution = Distribution.RADEMACHER
    mu: float = 1e-4              # zeroth-order difference step
    alpha: float = 1.0            # IF-family scale
    K: int = 20                   # Neumann truncation length
    s: int | None = None          # trgu kept steps (defaults to T)
    truncated_s: int | None = None  # vr baseline truncation; None = full baseline
    accumulation: int = 1

    def __post_init__(self):
        if self.T < 0 or self.b < 1 or self.accumulation < 1:
            raise InvalidArgument("need T >= 0, b >= 1, accumulation >= 1")
        if not self.mu > 0:
            raise InvalidArgument("mu must be positive")
        if self.K < 0:
            raise InvalidArgument("K must be >= 0")


@dataclass(frozen=True)
class RunRow:
    step: int
    phase: int
    meta_loss: float
    grad_norm: float
    wall_seconds: float
    seed: int


@dataclass
class RunRecord:
    """Per-step training log; serializes to CSV with a fixed column set."""

    COLUMNS = ("step", "phase", "meta_loss", "grad_norm", "wall_seconds", "seed")

    rows: list[RunRow] = field(default_factory=list)

    def append(self, row: RunRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise InvalidArgument("rows must be strictly increasing in step")
        self.rows.append(row)

    def meta_losses(self) -> np.ndarray:
        return np.array([r.meta_loss for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for r in self.rows:
                writer.writerow([r.step, r.phase, repr(r.meta_loss), repr(r.grad_norm),
                                 repr(r.wall_seconds), r.seed])

    @staticmethod
    def from_csv(path) -> "RunRecord":
        record = RunRecord()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != RunRecord.COLUMNS:
                raise InvalidArgument(f"unexpected CSV header {header}")
            for raw in reader:
                record.append(RunRow(int(raw[0]), int(raw[1]), float(raw[2]),
                                     float(raw[3]), float(raw[4]), int(raw[5])))
        return record


class TrainingDiverged(DivergenceError):
    """Raised when a run aborts; carries the partial record and last phi."""

    def __init__(self, message: str, phi: np.ndarray, record: RunRecord, step: int | None = None):
        super().__init__(message, step=step)
        self.phi = phi
        self.record = record


def one_estimate(
    problem: BilevelProblem,
    tag: str,
    phi: np.ndarray,
    phi_ref: np.ndarray,
    settings: EstimatorSettings,
    run_seed: int,
    dirs_seed: int,
    threads: int = 1,
) -> GradientEstimate:
    """Dispatch a single estimate of grad h(phi) by estimator tag."""
    est = settings
    if tag in ("fg2u", "fg2u_zo", "vr"):
        dirs = sample_directions(est.distribution, problem.n_meta, est.b, dirs_seed)
        if tag == "fg2u":
            return fg2u_estimate(problem, phi, est.T, run_seed, dirs, threads=threads)
        if tag == "fg2u_zo":
            return fg2u_zo_estimate(problem, phi, est.T, run_seed, dirs, est.mu, threads=threads)
        return vr_estimate(problem, phi, phi_ref, est.T, run_seed, dirs,
                           truncated_s=est.truncated_s, threads=threads)
    if tag in ("rgu", "trgu"):
        start = time.perf_counter()
        _, traj = unroll(problem, phi, est.T, run_seed, keep_trajectory=True)
        if tag == "rgu":
            grad = rgu_backward(problem, traj)
        else:
            grad = trgu(problem, traj, est.s if est.s is not None else est.T)
        return GradientEstimate(grad=grad, estimator=tag, b=0, T=est.T, mu=None,
                                wall_seconds=time.perf_counter() - start)
    if tag in ("neumann_if", "hessian_free"):
        start = time.perf_counter()
        theta_t, _ = unroll(problem, phi, est.T, run_seed)
        if tag == "neumann_if":
            inner = neumann_if_estimate(problem, theta_t, phi, est.alpha, est.K)
        else:
            inner = hessian_free_estimate(problem, theta_t, phi, est.alpha)
        return replace(inner, estimator=tag, T=est.T, wall_seconds=time.perf_counter() - start)
    raise InvalidArgument(f"unknown estimator tag {tag!r}")


def run_training(
    problem: BilevelProblem,
    schedule: PhaseSchedule,
    settings: EstimatorSettings,
    optimizer_kind: str = "gd",
    step_size: float = 0.1,
    master_seed: int = 0,
    phi0: np.ndarray | None = None,
    threads: int = 1,
) -> tuple[np.ndarray, RunRecord]:
    """Run the scheduled phases; each step averages `accumulation` estimates.

    Deterministic given (config, master_seed). On divergence the run aborts
    (no retry, so estimator comparisons keep identical histories) and raises
    TrainingDiverged carrying the partial RunRecord and the last finite phi;
    a terminator row with NaN loss marks the abort in the record.
    """
    phi = problem.initial_phi(harness_seed(master_seed, 0)) if phi0 is None else np.array(phi0, dtype=np.float64)
    phi_prev = phi.copy()   # vr reference: the previous meta iterate
    record = RunRecord()
    k = 0
    for phase_idx, phase in enumerate(schedule.phases(), start=1):
        opt = MetaOptimizer(optimizer_kind, step_size)
        for _ in range(phase.steps):
            run_seed = harness_seed(master_seed, 1, k)
            start = time.perf_counter()
            try:
                loss = problem.black_box_h(phi, settings.T, run_seed)
                if not np.isfinite(loss):
                    raise DivergenceError(f"meta loss non-finite at meta step {k}", step=k)
                grads = []
                for a in range(settings.accumulation):
                    dirs_seed = harness_seed(master_seed, 2, k, a)
                    grads.append(one_estimate(problem, phase.tag, phi, phi_prev,
                                              settings, run_seed, dirs_seed, threads=threads).grad)
                grad = np.mean(grads, axis=0)
                estimate = GradientEstimate(grad=grad, estimator=phase.tag, b=settings.b,
                                            T=settings.T, mu=settings.mu if phase.tag == "fg2u_zo" else None,
                                            wall_seconds=time.perf_counter() - start)
                phi_prev = phi.copy()
                phi = meta_step(opt, phi, estimate)
            except DivergenceError as exc:
                record.append(RunRow(k, phase_idx, float("nan"), float("nan"),
                                     time.perf_counter() - start, run_seed))
                raise TrainingDiverged(f"run diverged at meta step {k}: {exc}",
                                       phi=phi, record=record, step=k) from exc
            record.append(RunRow(k, phase_idx, loss, float(np.linalg.norm(grad)),
                                 time.perf_counter() - start, run_seed))
            k += 1
    return phi, record


def estimate_smoothness(
    oracle_grad,
    phi0: np.ndarray,
    seed: int = 0,
    n_probes: int = 32,
    radius: float = 1.0,
) -> float:
    """Numerical estimate of the gradient Lipschitz constant of h.

    Max of ||grad(x) - grad(y)|| / ||x - y|| over random segments near phi0;
    used to set the variance-adjusted step size beta = rho / ((rho+1) L_h).
    """
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    best = 0.0
    for _ in range(n_probes):
        x = phi0 + radius * gen.standard_normal(phi0.size)
        y = x + radius * gen.standard_normal(phi0.size)
        denom = float(np.linalg.norm(x - y))
        if denom == 0.0:
            continue
        ratio = float(np.linalg.norm(oracle_grad(x) - oracle_grad(y))) / denom
        best = max(best, ratio)
    return best


def variance_adjusted_step_size(rho: float, l_h: float) -> float:
    """beta = rho / ((rho + 1) L_h): the largest safe constant step when the
    gradient estimator's relative variance is 1/rho."""
    if not (rho > 0 and l_h > 0):
        raise InvalidArgument("rho and L_h must be positive")
    return rho / ((rho + 1.0) * l_h)

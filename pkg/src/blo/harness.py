"""Verification harness behind the CLI: gradient cross-checks, the variance
study, and benchmark/allocation sweeps."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Distribution, derive_seed, fd_gradient, sample_directions
from .errors import ConfigError
from .estimators import fg2u_estimate, validate_variance
from .meta_opt import EstimatorSettings, one_estimate
from .problems import DistillationProblem, QuadraticBilevel
from .problems.base import BilevelProblem
from .unroll import fgu_full, float_accounting, rgu_backward, trgu, unroll

# ---------------------------------------------------------------------------
# Gradient cross-check


@dataclass
class GradcheckReport:
    methods: list[str]
    errors: dict[tuple[str, str], float]
    thresholds: dict[tuple[str, str], float]
    passed: bool

    def render(self) -> str:
        width = max(len(m) for m in self.methods) + 2
        lines = ["pairwise max relative errors (threshold in parentheses):"]
        header = " " * width + "".join(f"{m:>18}" for m in self.methods)
        lines.append(header)
        for a in self.methods:
            row = f"{a:<{width}}"
            for b in self.methods:
                if a == b:
                    row += f"{'-':>18}"
                else:
                    key = (a, b) if (a, b) in self.errors else (b, a)
                    err = self.errors[key]
                    row += f"{err:>18.3e}"
            lines.append(row)
        for (a, b), err in sorted(self.errors.items()):
            tol = self.thresholds[(a, b)]
            status = "ok" if err <= tol else "FAIL"
            lines.append(f"  {a} vs {b}: {err:.3e} (<= {tol:.1e}) {status}")
        lines.append("gradcheck: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(a - b)) / scale


def gradcheck(problem: BilevelProblem, T: int, seed: int, fd_tol: float = 1e-6,
              exact_tol: float = 1e-10) -> GradcheckReport:
    """Cross-check every exact-gradient path against finite differences.

    Methods compared: fd (central differences of the black-box loss),
    fgu (dense forward recursion), rgu (reverse sweep), trgu at s = T
    (identical to rgu when the initialization is phi-independent), and fg2u
    with the complete coordinate basis b = N (algebraically exact).
    """
    run_seed = derive_seed(seed, 0xC0)
    phi = problem.initial_phi(derive_seed(seed, 0xC1))
    n = problem.n_meta

    grads: dict[str, np.ndarray] = {}
    grads["fd"] = fd_gradient(lambda p: problem.black_box_h(p, T, run_seed), phi)
    grads["fgu"], _ = fgu_full(problem, phi, T, run_seed)
    _, traj = unroll(problem, phi, T, run_seed, keep_trajectory=True)
    grads["rgu"] = rgu_backward(problem, traj)
    grads["trgu_full"] = trgu(problem, traj, T)
    dirs = sample_directions(Distribution.COORDINATE, n, n, derive_seed(seed, 0xC2))
    grads["fg2u_coord"] = fg2u_estimate(problem, phi, T, run_seed, dirs).grad

    methods = list(grads)
    errors = {}
    thresholds = {}
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            errors[(a, b)] = _relative_error(grads[a], grads[b])
            thresholds[(a, b)] = fd_tol if "fd" in (a, b) else exact_tol
    passed = all(errors[k] <= thresholds[k] for k in errors)
    return GradcheckReport(methods=methods, errors=errors, thresholds=thresholds, passed=passed)


def gradcheck_problem(kind: str, seed: int) -> tuple[BilevelProblem, float]:
    """Oracle-scale problem for the gradcheck command; returns (problem, fd_tol)."""
    if kind == "quadratic":
        return QuadraticBilevel.random(m=3, n=2, seed=seed, cond=4.0, ridge=0.1), 1e-6
    if kind == "distillation":
        problem = DistillationProblem.synthetic(
            classes=2, features=5, ipc=2, n_per_class=25, eta=0.5, data_seed=seed, init_seed=seed + 1
        )
        return problem, 1e-5
    raise ConfigError(f"gradcheck supports 'quadratic' or 'distillation', not {kind!r}")


# ---------------------------------------------------------------------------
# Variance study


@dataclass
class VarianceRow:
    n: int
    b: int
    predicted_ratio: float
    empirical_ratio: float
    confidence: str   # "ok" or "low"

    def within(self, rel_tol: float) -> bool:
        return abs(self.empirical_ratio - self.predicted_ratio) <= rel_tol * self.predicted_ratio


LOW_CONFIDENCE_SAMPLES = 1000


def variance_study(n: int, b_values: list[int], samples: int, seed: int = 0,
                   m: int = 8, T: int = 4) -> list[VarianceRow]:
    """Empirical variance-ratio rows on an auto-constructed quadratic.

    Rows with fewer than LOW_CONFIDENCE_SAMPLES samples are flagged "low"
    and excluded from tolerance gating.
    """
    if n < 2:
        raise ConfigError("variance: n must be >= 2")
    problem = QuadraticBilevel.random(m=m, n=n, seed=derive_seed(seed, 0xE0), cond=5.0, ridge=0.1)
    phi = problem.initial_phi(derive_seed(seed, 0xE1))
    rows = []
    for b in b_values:
        if not 1 <= b:
            raise ConfigError("variance: every b must be >= 1")
        report = validate_variance(problem, phi, T, b, samples, seed=derive_seed(seed, 0xE2, b))
        rows.append(VarianceRow(
            n=n, b=b, predicted_ratio=report.predicted_ratio,
            empirical_ratio=report.empirical_ratio,
            confidence="ok" if samples >= LOW_CONFIDENCE_SAMPLES else "low",
        ))
    return rows


def variance_csv(rows: list[VarianceRow]) -> str:
    out = ["n,b,predicted_ratio,empirical_ratio,confidence"]
    for r in rows:
        out.append(f"{r.n},{r.b},{r.predicted_ratio!r},{r.empirical_ratio!r},{r.confidence}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Benchmark / allocation sweep


@dataclass
class BenchRow:
    threads: int
    b: int
    seconds_per_meta_step: float
    peak_resident_floats: int
    grad_digest: str = field(repr=False, default="")


def bench_estimate(problem: BilevelProblem, tag: str, settings: EstimatorSettings,
                   phi: np.ndarray, master_seed: int, threads: int,
                   repeats: int = 3) -> BenchRow:
    """Time one meta-step's worth of estimation and meter its live floats.

    The gradient digest must be identical across thread counts: direction
    work is partitioned across threads but reduced in fixed index order.
    """
    run_seed = derive_seed(master_seed, 0xB0)
    dirs_seed = derive_seed(master_seed, 0xB1)
    grad = None
    peak = 0
    start = time.perf_counter()
    for _ in range(max(1, repeats)):
        with float_accounting() as meter:
            est = one_estimate(problem, tag, phi, phi, settings, run_seed, dirs_seed, threads=threads)
        grad = est.grad
        peak = max(peak, meter.peak)
    seconds = (time.perf_counter() - start) / max(1, repeats)
    digest = hashlib.sha256(np.ascontiguousarray(grad, dtype="<f8").tobytes()).hexdigest()
    return BenchRow(threads=threads, b=settings.b, seconds_per_meta_step=seconds,
                    peak_resident_floats=peak, grad_digest=digest)


def bench_csv(rows: list[BenchRow]) -> str:
    out = ["threads,b,seconds_per_meta_step,peak_resident_floats"]
    for r in rows:
        out.append(f"{r.threads},{r.b},{r.seconds_per_meta_step!r},{r.peak_resident_floats}")
    return "\n".join(out) + "\n"

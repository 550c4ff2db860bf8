import numpy as np
import pytest

from blo import (
    Distribution,
    EstimatorSettings,
    GradientEstimate,
    InvalidArgument,
    MetaOptimizer,
    Phase,
    PhaseSchedule,
    QuadraticBilevel,
    RunRecord,
    RunRow,
    TrainingDiverged,
    derive_seed,
    estimate_smoothness,
    fg2u_estimate,
    meta_step,
    one_estimate,
    quadratic_true_hypergradient,
    run_training,
    sample_directions,
    variance_adjusted_step_size,
)
from blo.problems.base import BilevelProblem


def wrap(grad, estimator="fg2u", b=1, T=1):
    return GradientEstimate(grad=np.asarray(grad, dtype=float), estimator=estimator,
                            b=b, T=T, mu=None, wall_seconds=0.0)


class TestMetaStep:
    def test_zero_gradient_leaves_phi_unchanged(self):
        phi = np.array([1.0, -2.0])
        for kind in ("gd", "adam"):
            opt = MetaOptimizer(kind, 0.1)
            assert np.array_equal(meta_step(opt, phi, wrap(np.zeros(2))), phi)

    def test_gd_arithmetic(self):
        opt = MetaOptimizer("gd", 0.1)
        new = meta_step(opt, np.array([1.0, 1.0]), wrap([1.0, -1.0]))
        assert np.allclose(new, [0.9, 1.1], atol=1e-15)

    def test_adam_bounded_first_step(self):
        opt = MetaOptimizer("adam", 0.05)
        new = meta_step(opt, np.zeros(3), wrap([100.0, -3.0, 0.5]))
        # first Adam step is +-step_size per coordinate regardless of scale
        assert np.allclose(np.abs(new), 0.05, rtol=1e-6)

    def test_dimension_mismatch(self):
        opt = MetaOptimizer("gd", 0.1)
        with pytest.raises(InvalidArgument):
            meta_step(opt, np.zeros(3), wrap([1.0]))

    def test_invalid_optimizer(self):
        with pytest.raises(InvalidArgument):
            MetaOptimizer("lbfgs", 0.1)
        with pytest.raises(InvalidArgument):
            MetaOptimizer("gd", -0.1)


class TestRunRecordCsv:
    def test_roundtrip(self, tmp_path):
        record = RunRecord()
        record.append(RunRow(0, 1, 0.123456789012345, 1.5, 0.01, 42))
        record.append(RunRow(1, 2, float(np.pi), 0.25, 0.02, 43))
        path = tmp_path / "run.csv"
        record.to_csv(path)
        back = RunRecord.from_csv(path)
        assert back.rows == record.rows

    def test_rows_strictly_increasing(self):
        record = RunRecord()
        record.append(RunRow(3, 1, 0.0, 0.0, 0.0, 0))
        with pytest.raises(InvalidArgument):
            record.append(RunRow(3, 1, 0.0, 0.0, 0.0, 0))


class ExplodingAfter(BilevelProblem):
    """Diverges once theta grows past a threshold; used for abort paths."""

    n_meta = 2
    n_inner = 2

    def meta_loss(self, theta, phi):
        with np.errstate(over="ignore"):
            return float(theta @ theta)

    def inner_init(self, phi):
        return np.array([1e3, 1e3])

    def transition(self, theta, phi, t, seed):
        with np.errstate(over="ignore"):
            return theta * 1e40

    def partial_f_theta(self, theta, phi):
        return 2 * theta

    def partial_f_phi(self, theta, phi):
        return np.zeros(2)

    def init_jvp(self, phi, v):
        return np.zeros(2)

    def transition_jvp(self, theta, phi, t, seed, y, v):
        return y

    def initial_phi(self, seed):
        return np.ones(2)


class TestRunTraining:
    def make_problem(self):
        return QuadraticBilevel.random(6, 8, seed=30, cond=5.0, ridge=0.2)

    def test_pure_phase2_runs_requested_steps(self):
        p = self.make_problem()
        schedule = PhaseSchedule(phase1=None, phase2=Phase("fg2u", 12))
        settings = EstimatorSettings(T=5, b=4)
        phi, record = run_training(p, schedule, settings, "gd", 0.05, master_seed=1)
        assert len(record.rows) == 12
        assert all(r.phase == 1 for r in record.rows)
        assert np.all(np.isfinite(record.meta_losses()))

    def test_deterministic_meta_loss_column(self):
        p = self.make_problem()
        schedule = PhaseSchedule(phase2=Phase("fg2u", 8))
        settings = EstimatorSettings(T=5, b=3, accumulation=2)
        _, rec1 = run_training(p, schedule, settings, "adam", 0.05, master_seed=7)
        _, rec2 = run_training(p, schedule, settings, "adam", 0.05, master_seed=7)
        assert np.array_equal(rec1.meta_losses(), rec2.meta_losses())
        assert [r.seed for r in rec1.rows] == [r.seed for r in rec2.rows]

    def test_two_phase_switches_estimators(self):
        p = self.make_problem()
        schedule = PhaseSchedule(phase1=Phase("hessian_free", 5), phase2=Phase("fg2u", 5))
        settings = EstimatorSettings(T=5, b=3)
        _, record = run_training(p, schedule, settings, "gd", 0.05, master_seed=2)
        assert [r.phase for r in record.rows] == [1] * 5 + [2] * 5

    def test_divergence_aborts_with_partial_record(self):
        schedule = PhaseSchedule(phase2=Phase("fg2u", 10))
        settings = EstimatorSettings(T=4, b=1)   # theta overflows at step 4
        with pytest.raises(TrainingDiverged) as info:
            run_training(ExplodingAfter(), schedule, settings, "gd", 0.1, master_seed=3)
        record = info.value.record
        assert len(record.rows) >= 1
        assert np.isnan(record.rows[-1].meta_loss)

    def test_loss_decreases_on_quadratic(self):
        p = self.make_problem()
        schedule = PhaseSchedule(phase2=Phase("fg2u", 60))
        settings = EstimatorSettings(T=8, b=8)
        _, record = run_training(p, schedule, settings, "gd", 0.02, master_seed=4)
        losses = record.meta_losses()
        assert np.median(losses[-10:]) < np.median(losses[:10])

    def test_two_phase_warm_start_helps(self):
        # hessian_free warm start for 200 steps, then fg2u 200 steps, vs
        # pure fg2u with 200 steps: medians over 10 master seeds
        p = QuadraticBilevel.random(8, 12, seed=31, cond=3.0, ridge=0.2)
        settings = EstimatorSettings(T=8, b=4)
        two_phase, pure = [], []
        for seed in range(10):
            schedule = PhaseSchedule(phase1=Phase("hessian_free", 200),
                                     phase2=Phase("fg2u", 200))
            _, rec = run_training(p, schedule, settings, "gd", 0.03, master_seed=seed)
            two_phase.append(rec.rows[-1].meta_loss)
            schedule = PhaseSchedule(phase2=Phase("fg2u", 200))
            _, rec = run_training(p, schedule, settings, "gd", 0.03, master_seed=seed)
            pure.append(rec.rows[-1].meta_loss)
        assert np.median(two_phase) <= np.median(pure)

    def test_accumulation_equivalence_in_expectation(self):
        # one step with accumulation=4, b=2 has the same expected update as
        # a single b=8 batch: compare Monte Carlo means within 3 sigma
        p = QuadraticBilevel.random(5, 10, seed=32)
        phi = p.initial_phi(20)
        settings_acc = EstimatorSettings(T=4, b=2, accumulation=4)
        n_samples = 3000
        acc_mean = np.zeros(10)
        acc_sq = np.zeros(10)
        big_mean = np.zeros(10)
        big_sq = np.zeros(10)
        for s in range(n_samples):
            grads = [
                one_estimate(p, "fg2u", phi, phi, settings_acc, run_seed=9,
                             dirs_seed=derive_seed(33, s, a)).grad
                for a in range(4)
            ]
            g = np.mean(grads, axis=0)
            acc_mean += g
            acc_sq += g * g
            dirs = sample_directions(Distribution.RADEMACHER, 10, 8, seed=derive_seed(34, s))
            g2 = fg2u_estimate(p, phi, 4, run_seed=9, dirs=dirs).grad
            big_mean += g2
            big_sq += g2 * g2
        acc_mean /= n_samples
        big_mean /= n_samples
        std = np.sqrt(np.maximum(acc_sq / n_samples - acc_mean**2, 0.0)
                      + np.maximum(big_sq / n_samples - big_mean**2, 0.0))
        margin = 3.0 * std / np.sqrt(n_samples)
        assert np.all(np.abs(acc_mean - big_mean) <= margin + 1e-12)


class TestSmoothnessEstimate:
    def test_quadratic_curvature_recovered(self):
        p = QuadraticBilevel.random(5, 4, seed=33, ridge=0.3)
        T = 10
        # analytic L_h: lambda_max(Z^T Z) + ridge for h = f(theta_T(phi), phi)
        contraction = np.eye(5) - p.eta * p.a_matrix
        z = np.zeros((5, 4))
        for _ in range(T):
            z = contraction @ z + p.eta * p.b_matrix
        true_l = float(np.linalg.eigvalsh(z.T @ z)[-1] + p.ridge)
        est = estimate_smoothness(lambda q: quadratic_true_hypergradient(p, q, T),
                                  p.initial_phi(0), seed=1, n_probes=64)
        assert 0.3 * true_l <= est <= true_l * (1.0 + 1e-9)

    def test_variance_adjusted_step_size(self):
        assert variance_adjusted_step_size(1.0, 2.0) == pytest.approx(0.25)
        with pytest.raises(InvalidArgument):
            variance_adjusted_step_size(0.0, 1.0)


class TestConvergenceTrendSmoke:
    def test_gradient_norm_running_mean_shrinks(self):
        p = QuadraticBilevel.random(6, 10, seed=34, cond=4.0, ridge=0.3)
        T = 8
        rho = 4 / 9
        l_h = estimate_smoothness(lambda q: quadratic_true_hypergradient(p, q, T),
                                  p.initial_phi(1), seed=2)
        beta = variance_adjusted_step_size(rho, l_h)
        opt = MetaOptimizer("gd", beta)
        phi = p.initial_phi(3)
        norms = []
        for k in range(200):
            dirs = sample_directions(Distribution.RADEMACHER, 10, 4, seed=derive_seed(35, k))
            est = fg2u_estimate(p, phi, T, run_seed=11, dirs=dirs)
            norms.append(float(np.sum(quadratic_true_hypergradient(p, phi, T) ** 2)))
            phi = meta_step(opt, phi, est)
        running = np.cumsum(norms) / np.arange(1, 201)
        assert running[-1] < 0.2 * running[9]

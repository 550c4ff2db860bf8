import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blo import (
    DistillationProblem,
    InvalidArgument,
    QuadraticBilevel,
    fd_gradient,
    fd_transition_jvp,
    fgu_full,
    quadratic_true_hypergradient,
)


def make_quadratic(m=3, n=2, seed=0, **kw):
    return QuadraticBilevel.random(m=m, n=n, seed=seed, **kw)


def differentiable_problems():
    return [
        make_quadratic(),
        DistillationProblem.synthetic(classes=3, features=4, ipc=1, n_per_class=20,
                                      eta=0.4, data_seed=3, init_seed=4),
        DistillationProblem.synthetic(classes=2, features=3, ipc=2, n_per_class=15,
                                      eta=0.3, model="one_hidden", hidden=5,
                                      data_seed=5, init_seed=6),
    ]


class TestQuadraticConstruction:
    def test_rejects_unstable_eta(self):
        with pytest.raises(InvalidArgument):
            QuadraticBilevel(np.eye(2), np.eye(2), np.zeros(2), eta=2.5)

    def test_rejects_asymmetric_a(self):
        a = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(InvalidArgument):
            QuadraticBilevel(a, np.eye(2), np.zeros(2), eta=0.1)

    def test_rejects_indefinite_a(self):
        with pytest.raises(InvalidArgument):
            QuadraticBilevel(np.diag([1.0, -1.0]), np.eye(2), np.zeros(2), eta=0.1)


class TestQuadraticTrueHypergradient:
    def test_t0_constant_init_gives_ridge_term_only(self):
        p = make_quadratic(ridge=0.7)
        phi = np.array([0.3, -1.2])
        grad = quadratic_true_hypergradient(p, phi, T=0)
        assert np.allclose(grad, 0.7 * phi, atol=1e-14)

    def test_one_step_scalar_instance(self):
        # A = I, eta = 1, B = I, M = N = 1: theta_1 = phi
        p = QuadraticBilevel(np.eye(1), np.eye(1), theta_star=np.array([2.0]),
                             eta=1.0, ridge=0.5, theta_init=np.array([7.0]))
        phi = np.array([1.5])
        grad = quadratic_true_hypergradient(p, phi, T=1)
        expected = (phi - p.theta_star) + 0.5 * phi
        assert np.allclose(grad, expected, atol=1e-14)

    def test_matches_fd_oracle(self):
        p = make_quadratic(m=3, n=2, seed=1)
        phi = p.initial_phi(10)
        grad = quadratic_true_hypergradient(p, phi, T=5)
        fd = fd_gradient(lambda q: p.black_box_h(q, 5, 0), phi)
        assert np.linalg.norm(grad - fd) <= 1e-6 * np.linalg.norm(grad)

    def test_h_is_exact_quadratic_in_phi(self):
        p = make_quadratic(m=4, n=3, seed=2)
        gen = np.random.default_rng(0)
        phi0, direction = gen.standard_normal(3), gen.standard_normal(3)
        h = lambda a: p.black_box_h(phi0 + a * direction, 6, 0)
        # second differences of a quadratic are constant in the offset
        d2_at = lambda a: h(a + 1.0) - 2 * h(a) + h(a - 1.0)
        assert d2_at(0.0) == pytest.approx(d2_at(2.5), rel=1e-9)


class TestBlackBoxConsistency:
    def test_equals_meta_loss_of_unroll(self):
        from blo import unroll

        p = make_quadratic()
        phi = p.initial_phi(3)
        theta, _ = unroll(p, phi, 7, run_seed=5)
        assert p.black_box_h(phi, 7, 5) == p.meta_loss(theta, phi)


class TestDerivativeOracles:
    @pytest.mark.parametrize("problem", differentiable_problems())
    def test_transition_jvp_matches_finite_differences(self, problem):
        gen = np.random.default_rng(1)
        phi = problem.initial_phi(2)
        theta = problem.inner_init(phi) + 0.1 * gen.standard_normal(problem.n_inner)
        y = gen.standard_normal(problem.n_inner)
        v = gen.standard_normal(problem.n_meta)
        jvp = problem.transition_jvp(theta, phi, 1, 0, y, v)
        approx = fd_transition_jvp(problem, theta, phi, 1, 0, y, v, eps=1e-5)
        assert np.linalg.norm(approx - jvp) <= 1e-5 * (1.0 + np.linalg.norm(jvp))

    @pytest.mark.parametrize("problem", differentiable_problems())
    def test_adjoint_consistency(self, problem):
        # <d, A y + B v> == <d A, y> + <d B, v> within 1e-10 relative
        gen = np.random.default_rng(2)
        phi = problem.initial_phi(4)
        theta = problem.inner_init(phi) + 0.1 * gen.standard_normal(problem.n_inner)
        d = gen.standard_normal(problem.n_inner)
        y = gen.standard_normal(problem.n_inner)
        v = gen.standard_normal(problem.n_meta)
        lhs = float(d @ problem.transition_jvp(theta, phi, 1, 0, y, v))
        d_a, d_b = problem.transition_vjp(theta, phi, 1, 0, d)
        rhs = float(d_a @ y) + float(d_b @ v)
        assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(lhs))

    @pytest.mark.parametrize("problem", differentiable_problems())
    def test_jvp_linearity(self, problem):
        gen = np.random.default_rng(3)
        phi = problem.initial_phi(5)
        theta = problem.inner_init(phi) + 0.05 * gen.standard_normal(problem.n_inner)
        y1, y2 = gen.standard_normal((2, problem.n_inner))
        v1, v2 = gen.standard_normal((2, problem.n_meta))
        a = 1.7
        combined = problem.transition_jvp(theta, phi, 1, 0, a * y1 + y2, a * v1 + v2)
        parts = a * problem.transition_jvp(theta, phi, 1, 0, y1, v1) + problem.transition_jvp(
            theta, phi, 1, 0, y2, v2
        )
        assert np.linalg.norm(combined - parts) <= 1e-9 * (1.0 + np.linalg.norm(combined))

    @pytest.mark.parametrize("problem", differentiable_problems())
    def test_g_hvp_symmetry(self, problem):
        gen = np.random.default_rng(4)
        phi = problem.initial_phi(6)
        theta = problem.inner_init(phi) + 0.1 * gen.standard_normal(problem.n_inner)
        u1, u2 = gen.standard_normal((2, problem.n_inner))
        lhs = float(u1 @ problem.g_hvp(theta, phi, u2))
        rhs = float(u2 @ problem.g_hvp(theta, phi, u1))
        assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(lhs))

    @pytest.mark.parametrize("problem", differentiable_problems())
    def test_g_cross_vjp_matches_fd_of_inner_gradient(self, problem):
        # oracle: gradient of the scalar phi -> <r, grad_theta g(theta, phi)>
        gen = np.random.default_rng(5)
        phi = problem.initial_phi(7)
        theta = problem.inner_init(phi) + 0.1 * gen.standard_normal(problem.n_inner)
        r = gen.standard_normal(problem.n_inner)

        def inner_grad_along_r(q):
            # recover grad_theta g from the transition: theta - eta * grad
            stepped = problem.transition(theta, q, 1, 0)
            return float(r @ (theta - stepped)) / problem.eta

        expected = fd_gradient(inner_grad_along_r, phi, eps=1e-6)
        got = problem.g_cross_vjp(theta, phi, r)
        assert np.linalg.norm(expected - got) <= 1e-5 * (1.0 + np.linalg.norm(got))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_property_quadratic_adjoint(self, seed):
        p = make_quadratic(m=4, n=3, seed=17)
        gen = np.random.default_rng(seed)
        theta = gen.standard_normal(4)
        phi = gen.standard_normal(3)
        d, y, v = gen.standard_normal(4), gen.standard_normal(4), gen.standard_normal(3)
        lhs = float(d @ p.transition_jvp(theta, phi, 1, 0, y, v))
        d_a, d_b = p.transition_vjp(theta, phi, 1, 0, d)
        rhs = float(d_a @ y) + float(d_b @ v)
        assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(lhs))


class TestDistillation:
    def test_meta_loss_independent_of_phi(self):
        p = DistillationProblem.synthetic(data_seed=8, init_seed=9)
        phi = p.initial_phi(1)
        theta = p.inner_init(phi)
        assert np.array_equal(p.partial_f_phi(theta, phi), np.zeros(p.n_meta))
        assert p.meta_loss(theta, phi) == p.meta_loss(theta, 2.0 * phi)

    def test_partial_f_theta_matches_fd(self):
        p = DistillationProblem.synthetic(classes=3, features=4, data_seed=11, init_seed=12)
        phi = p.initial_phi(2)
        gen = np.random.default_rng(6)
        theta = p.inner_init(phi) + 0.2 * gen.standard_normal(p.n_inner)
        fd = fd_gradient(lambda th: p.meta_loss(th, phi), theta)
        assert np.linalg.norm(fd - p.partial_f_theta(theta, phi)) < 1e-7

    def test_full_batch_transition_ignores_seed(self):
        p = DistillationProblem.synthetic(data_seed=13, init_seed=14)
        phi = p.initial_phi(3)
        theta = p.inner_init(phi)
        assert np.array_equal(p.transition(theta, phi, 1, 0), p.transition(theta, phi, 1, 99))

    def test_training_improves_accuracy(self):
        p = DistillationProblem.synthetic(classes=3, features=6, n_per_class=60,
                                          class_sep=2.5, data_seed=15, init_seed=16)
        phi = p.initial_phi(4)
        theta = p.inner_init(phi)
        acc0 = p.accuracy(theta, p.train_x, p.train_y)
        for t in range(1, 101):
            theta = p.transition(theta, phi, t, 0)
        acc1 = p.accuracy(theta, p.train_x, p.train_y)
        assert acc1 > acc0 + 0.2

    def test_condensed_labels_fixed_one_per_class(self):
        p = DistillationProblem.synthetic(classes=4, ipc=2, data_seed=17, init_seed=18)
        assert np.array_equal(p.labels_c, np.repeat(np.arange(4), 2))


class TestFguCrossCheck:
    def test_fd_agrees_with_fgu_on_quadratic(self):
        p = make_quadratic(m=3, n=2, seed=21)
        phi = p.initial_phi(22)
        fd = fd_gradient(lambda q: p.black_box_h(q, 5, 1), phi)
        exact, _ = fgu_full(p, phi, 5, 1)
        assert np.linalg.norm(fd - exact) <= 1e-6 * np.linalg.norm(exact)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blo import (
    Distribution,
    DivergenceError,
    InvalidArgument,
    Rng,
    derive_seed,
    fd_gradient,
    sample_directions,
)
from blo.core import mean_outer_product


class TestSampleDirections:
    def test_rademacher_support(self):
        batch = sample_directions(Distribution.RADEMACHER, 4, 1, seed=11)
        assert set(np.unique(batch.directions)).issubset({-1.0, 1.0})

    def test_coordinate_full_basis_identity(self):
        batch = sample_directions(Distribution.COORDINATE, 4, 4, seed=3)
        # distinct indices, so (1/4) sum v v^T is exactly I
        assert np.array_equal(mean_outer_product(batch.directions), np.eye(4))

    def test_coordinate_rows_are_scaled_basis_vectors(self):
        batch = sample_directions(Distribution.COORDINATE, 6, 10, seed=5)
        for v in batch.directions:
            nonzero = v[v != 0.0]
            assert nonzero.size == 1 and nonzero[0] == pytest.approx(np.sqrt(6))

    @pytest.mark.parametrize("dist", [Distribution.RADEMACHER, Distribution.COORDINATE])
    def test_norm_squared_is_exactly_n(self, dist):
        batch = sample_directions(dist, 9, 8, seed=2)
        for v in batch.directions:
            assert float(v @ v) == pytest.approx(9.0, abs=1e-12)

    @pytest.mark.parametrize(
        "dist", [Distribution.RADEMACHER, Distribution.GAUSSIAN, Distribution.COORDINATE]
    )
    def test_second_moment_converges_to_identity(self, dist):
        # Monte Carlo oracle: E[v v^T] = I, max-entry error O(1/sqrt(S)).
        batch = sample_directions(dist, 10, 100_000, seed=7)
        moment = (batch.directions.T @ batch.directions) / batch.b
        assert np.max(np.abs(moment - np.eye(10))) < 0.02

    def test_replayable_and_prefix_stable(self):
        a = sample_directions(Distribution.RADEMACHER, 16, 5, seed=42)
        b = sample_directions(Distribution.RADEMACHER, 16, 5, seed=42)
        assert np.array_equal(a.directions, b.directions)
        # direction j is a pure function of (seed, j): shrinking b keeps rows
        c = sample_directions(Distribution.RADEMACHER, 16, 3, seed=42)
        assert np.array_equal(a.directions[:3], c.directions)

    def test_distinct_seeds_differ(self):
        a = sample_directions(Distribution.GAUSSIAN, 8, 4, seed=0)
        b = sample_directions(Distribution.GAUSSIAN, 8, 4, seed=1)
        assert not np.array_equal(a.directions, b.directions)

    def test_invalid_sizes_rejected(self):
        with pytest.raises(InvalidArgument):
            sample_directions(Distribution.RADEMACHER, 0, 1, seed=0)
        with pytest.raises(InvalidArgument):
            sample_directions(Distribution.RADEMACHER, 4, 0, seed=0)

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=32),
        b=st.integers(min_value=1, max_value=8),
        seed=st.integers(min_value=0, max_value=2**32),
    )
    def test_property_rademacher_norm(self, n, b, seed):
        batch = sample_directions(Distribution.RADEMACHER, n, b, seed)
        assert np.all(np.abs(batch.directions) == 1.0)


class TestRng:
    def test_identical_seed_identical_stream(self):
        x = Rng(9).substream(1, 2).standard_normal(6)
        y = Rng(9).substream(1, 2).standard_normal(6)
        assert np.array_equal(x, y)

    def test_substreams_independent_of_creation_order(self):
        r = Rng(9)
        a_then_b = (r.substream(0).standard_normal(4), r.substream(1).standard_normal(4))
        b_then_a = (Rng(9).substream(1).standard_normal(4), Rng(9).substream(0).standard_normal(4))
        assert np.array_equal(a_then_b[0], b_then_a[1])
        assert np.array_equal(a_then_b[1], b_then_a[0])

    def test_derive_seed_pure(self):
        assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
        assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)


class TestFdGradient:
    def test_constant_function_zero_gradient(self):
        grad = fd_gradient(lambda p: 3.5, np.array([1.0, -2.0, 0.5]))
        assert np.array_equal(grad, np.zeros(3))

    def test_half_norm_squared(self):
        phi = np.array([1.0, 2.0])
        grad = fd_gradient(lambda p: 0.5 * float(p @ p), phi, eps=1e-6)
        assert np.max(np.abs(grad - phi)) < 1e-8

    def test_nonfinite_h_raises(self):
        with pytest.raises(DivergenceError):
            fd_gradient(lambda p: float("nan"), np.array([1.0]))

    def test_bad_eps_rejected(self):
        with pytest.raises(InvalidArgument):
            fd_gradient(lambda p: 0.0, np.array([1.0]), eps=0.0)

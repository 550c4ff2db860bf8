"""Dense vector primitives, deterministic RNG, direction sampling, and the
finite-difference gradient oracle.

Everything here is 64-bit and replayable: a direction batch, an inner-step
seed, or a substream is always a pure function of the seeds that name it, so
any computation can be re-run bit-exactly regardless of thread count.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, InvalidArgument

# Substream namespaces. Distinct tags keep direction sampling, inner-step
# seeds, and harness-level seeds from ever colliding on the same Philox key.
_STREAM_DIRECTION = 0x01
_STREAM_COORD_PERM = 0x02
_STREAM_STEP = 0x03
_STREAM_HARNESS = 0x04


def _generator(seed: int, *indices: int) -> np.random.Generator:
    """Counter-based generator for substream (seed, *indices).

    Philox is counter-based: substreams are independent and need no shared
    mutable state, which is what makes per-direction sampling safely
    parallel and bit-reproducible.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *indices: int) -> int:
    """Derive a 64-bit subseed as a pure function of (seed, *indices)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def step_seed(run_seed: int, t: int) -> int:
    """Seed of inner step t; shared by unrolling and black-box evaluation so
    perturbed runs see common random numbers."""
    return derive_seed(run_seed, _STREAM_STEP, t)


def harness_seed(master_seed: int, *indices: int) -> int:
    """Subseed for harness-level bookkeeping (per meta step, per accumulation)."""
    return derive_seed(master_seed, _STREAM_HARNESS, *indices)


class Rng:
    """Deterministic counter-based RNG root.

    Identical seed gives an identical stream; ``substream(i, j, ...)`` is a
    pure function of (seed, indices) with no shared mutable state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def substream(self, *indices: int) -> np.random.Generator:
        return _generator(self.seed, *indices)

    def derive(self, *indices: int) -> int:
        return derive_seed(self.seed, *indices)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


def as_vector(values, n: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate and return a finite float64 1-D array of length >= 1."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidArgument(f"{name} must be a 1-D vector with at least one entry")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    if n is not None and arr.size != n:
        raise InvalidArgument(f"{name} has length {arr.size}, expected {n}")
    return arr


class Distribution(enum.Enum):
    """Random-direction distributions with E[v v^T] = I."""

    RADEMACHER = "rademacher"
    GAUSSIAN = "gaussian"
    COORDINATE = "coordinate"


@dataclass(frozen=True)
class DirectionBatch:
    """b i.i.d. random directions, replayable from (base_seed, j).

    directions has shape (b, n). For Rademacher and Coordinate every row
    satisfies ||v||^2 = n exactly.
    """

    directions: np.ndarray
    distribution: Distribution
    base_seed: int

    @property
    def b(self) -> int:
        return self.directions.shape[0]

    @property
    def n(self) -> int:
        return self.directions.shape[1]

    def direction(self, j: int) -> np.ndarray:
        return self.directions[j]


def _sample_one(dist: Distribution, n: int, seed: int, j: int, coord_perm: np.ndarray | None) -> np.ndarray:
    if dist is Distribution.RADEMACHER:
        gen = _generator(seed, _STREAM_DIRECTION, j)
        return (2.0 * gen.integers(0, 2, size=n) - 1.0).astype(np.float64)
    if dist is Distribution.GAUSSIAN:
        gen = _generator(seed, _STREAM_DIRECTION, j)
        return gen.standard_normal(n)
    # Coordinate: sqrt(n) * e_i with indices drawn from a seed-determined
    # permutation, so b <= n always yields distinct indices and b == n
    # recovers the exact identity (1/n) sum v v^T = I.
    assert coord_perm is not None
    v = np.zeros(n)
    v[coord_perm[j % n]] = np.sqrt(n)
    return v


def sample_directions(dist: Distribution, n: int, b: int, seed: int) -> DirectionBatch:
    """Sample b directions of length n; direction j is a pure function of (seed, j)."""
    if n < 1:
        raise InvalidArgument("direction length n must be >= 1")
    if b < 1:
        raise InvalidArgument("batch size b must be >= 1")
    coord_perm = None
    if dist is Distribution.COORDINATE:
        coord_perm = _generator(seed, _STREAM_COORD_PERM).permutation(n)
    rows = [_sample_one(dist, n, seed, j, coord_perm) for j in range(b)]
    return DirectionBatch(directions=np.asarray(rows, dtype=np.float64), distribution=dist, base_seed=int(seed))


def fd_gradient(
    h: Callable[[np.ndarray], float],
    phi: np.ndarray,
    eps: float = 1e-6,
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    This is the independent oracle used by every gradient test suite; central
    differences give O(eps^2) accuracy, which keeps the oracle tighter than
    the estimators it checks.
    """
    if not eps > 0:
        raise InvalidArgument("eps must be positive")
    phi = as_vector(phi, name="phi")
    grad = np.empty_like(phi)
    for i in range(phi.size):
        step = np.zeros_like(phi)
        step[i] = eps
        hi = float(h(phi + step))
        lo = float(h(phi - step))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise DivergenceError(f"h non-finite near coordinate {i}", step=i)
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def mean_outer_product(directions: Sequence[np.ndarray]) -> np.ndarray:
    """(1/b) sum of v v^T; testing helper for the E[v v^T] = I property."""
    mats = [np.outer(v, v) for v in directions]
    return np.mean(mats, axis=0)

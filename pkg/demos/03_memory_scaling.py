"""Why carry tangents instead of Jacobians or trajectories.

The tangent recursion keeps b vectors of length M alive, independent of the
unrolled depth T. Reverse unrolling stores every iterate, O(T M); the dense
forward recursion holds the full M x N Jacobian, O(M N). The allocation
meter reports the floats each engine actually retains.
"""

from blo import (
    Distribution,
    EstimatorSettings,
    QuadraticBilevel,
    fgu_full,
    float_accounting,
    one_estimate,
    sample_directions,
    unroll_with_tangents,
)

M, N, b = 40, 30, 8
problem = QuadraticBilevel.random(M, N, seed=5, cond=5.0)
phi = problem.initial_phi(6)
dirs = sample_directions(Distribution.RADEMACHER, N, b, seed=7)

print(f"M={M} N={N} b={b}; tangent engine predicts M + b*M + b*N = {M + b*M + b*N} floats")
print(f"{'T':>6} {'tangents':>10} {'reverse':>10} {'dense fwd':>10}")
for T in (50, 100, 200, 400):
    with float_accounting() as meter:
        unroll_with_tangents(problem, phi, T, run_seed=0, dirs=dirs)
    tangent_peak = meter.peak
    with float_accounting() as meter:
        one_estimate(problem, "rgu", phi, phi, EstimatorSettings(T=T, b=1), 0, 0)
    reverse_peak = meter.peak
    with float_accounting() as meter:
        fgu_full(problem, phi, T, run_seed=0)
    dense_peak = meter.peak
    print(f"{T:>6} {tangent_peak:>10} {reverse_peak:>10} {dense_peak:>10}")
print("tangent column is flat in T; reverse grows ~linearly; dense pays M*N at any depth")

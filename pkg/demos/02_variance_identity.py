"""The Rademacher forward gradient has a known exact variance.

For directions with +-1 entries the squared estimation error satisfies
E||grad_hat - grad||^2 = ((N-1)/b) ||grad||^2: dimension minus one over the
number of directions. This script measures the ratio by Monte Carlo on a
quadratic instance where the true gradient is available in closed form.
"""

from blo import QuadraticBilevel, validate_variance

N = 30
problem = QuadraticBilevel.random(m=8, n=N, seed=3, cond=5.0, ridge=0.1)
phi = problem.initial_phi(4)

print(f"N = {N}, 4000 samples per row")
print(f"{'b':>4} {'predicted':>10} {'empirical':>10} {'rel dev':>8}")
for b in (1, 4, 9, 29):
    report = validate_variance(problem, phi, T=4, b=b, n_samples=4000, seed=b)
    dev = abs(report.empirical_ratio - report.predicted_ratio) / report.predicted_ratio
    print(f"{b:>4} {report.predicted_ratio:>10.3f} {report.empirical_ratio:>10.3f} {dev:>7.1%}")

"""Truncated reverse unrolling is biased, and the bias decays geometrically.

Keeping only the last s reverse steps drops the early implicit-gradient
terms. Under a strongly convex inner problem with gradient-descent dynamics
the dropped remainder shrinks like (1 - eta*alpha)^s, so the log-error
against the exact hypergradient falls on a straight line whose slope is
log(1 - eta*alpha).
"""

import numpy as np

from blo import QuadraticBilevel, quadratic_true_hypergradient, trgu, unroll

T = 50
problem = QuadraticBilevel.random(4, 3, seed=22, cond=2.0, eta=0.3)
phi = problem.initial_phi(11)
_, traj = unroll(problem, phi, T, run_seed=9, keep_trajectory=True)
exact = quadratic_true_hypergradient(problem, phi, T)

s_values = np.arange(1, T + 1)
errs = np.array([np.linalg.norm(trgu(problem, traj, s) - exact) for s in s_values])
for s in (1, 5, 10, 20, 40, 50):
    print(f"  s = {s:>3}: ||trgu(s) - grad h|| = {errs[s - 1]:.3e}")

keep = errs > 1e-12 * np.linalg.norm(exact)
slope = np.polyfit(s_values[keep], np.log(errs[keep]), 1)[0]
print(f"fitted slope {slope:.4f} vs log(1 - eta*alpha) = "
      f"{np.log(1 - problem.eta * problem.alpha):.4f}")

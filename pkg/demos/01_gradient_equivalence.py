"""Every exact hypergradient path must agree.

On a small quadratic bi-level instance the hypergradient is available five
ways: central finite differences of the end-to-end loss, the dense forward
recursion (full Jacobian), the reverse sweep over a stored trajectory, the
truncated reverse sweep run to full depth, and the forward-gradient estimator
fed the complete coordinate basis. The first is an O(eps^2) approximation;
the other four are exact and agree to rounding.
"""

import numpy as np

from blo import (
    Distribution,
    QuadraticBilevel,
    fd_gradient,
    fg2u_estimate,
    fgu_full,
    quadratic_true_hypergradient,
    rgu_backward,
    sample_directions,
    trgu,
    unroll,
)

T = 5
problem = QuadraticBilevel.random(m=3, n=2, seed=0, cond=4.0, ridge=0.1)
phi = problem.initial_phi(1)

grads = {"closed_form": quadratic_true_hypergradient(problem, phi, T)}
grads["fd"] = fd_gradient(lambda q: problem.black_box_h(q, T, 0), phi)
grads["fgu_full"], _ = fgu_full(problem, phi, T, run_seed=0)
_, traj = unroll(problem, phi, T, run_seed=0, keep_trajectory=True)
grads["rgu"] = rgu_backward(problem, traj)
grads["trgu_s_T"] = trgu(problem, traj, T)
basis = sample_directions(Distribution.COORDINATE, problem.n_meta, problem.n_meta, seed=2)
grads["fg2u_coord"] = fg2u_estimate(problem, phi, T, run_seed=0, dirs=basis).grad

reference = grads["closed_form"]
print(f"quadratic M=3 N=2 T={T}, grad h = {reference}")
for name, g in grads.items():
    rel = np.linalg.norm(g - reference) / np.linalg.norm(reference)
    print(f"  {name:<12} relative error vs closed form: {rel:.3e}")

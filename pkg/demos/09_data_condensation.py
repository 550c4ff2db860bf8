"""Learning a four-point dataset that trains a whole classifier.

Performance matching: the meta parameter is a tiny synthetic dataset (one
point per class); the inner loop trains a small network on it; the outer
loss is the trained network's cross-entropy on the original data. Estimators
are compared under one shared budget: exact reverse unrolling, the unbiased
forward-gradient estimator, aggressive truncation, and the Hessian-free
shortcut.
"""

import numpy as np

from blo import DistillationProblem, EstimatorSettings, Phase, PhaseSchedule, run_training, unroll

T, K = 100, 150
problem = DistillationProblem.synthetic(
    classes=4, features=8, ipc=1, n_per_class=100, eta=0.5, class_sep=3.0,
    noise=1.0, model="one_hidden", hidden=12, data_seed=100, init_seed=200,
)
phi0 = problem.initial_phi(300)
theta0, _ = unroll(problem, phi0, T, run_seed=0)
print(f"meta dims N = {problem.n_meta}, inner dims M = {problem.n_inner}, "
      f"T = {T}, {K} meta steps")
print(f"accuracy from the initial condensed set: "
      f"{problem.accuracy(theta0, problem.train_x, problem.train_y):.3f}")

methods = {
    "rgu (exact)": ("rgu", EstimatorSettings(T=T, b=1)),
    "fg2u (b=32)": ("fg2u", EstimatorSettings(T=T, b=32)),
    "trgu (s=10)": ("trgu", EstimatorSettings(T=T, b=1, s=10)),
    "hessian-free": ("hessian_free", EstimatorSettings(T=T, b=1, alpha=1.0)),
}
for label, (tag, settings) in methods.items():
    schedule = PhaseSchedule(phase2=Phase(tag, K))
    phi, record = run_training(problem, schedule, settings, "adam", 0.01,
                               master_seed=0, phi0=phi0.copy())
    theta, _ = unroll(problem, phi, T, run_seed=0)
    acc = problem.accuracy(theta, problem.train_x, problem.train_y)
    print(f"  {label:<13} final loss {record.rows[-1].meta_loss:.4f}  accuracy {acc:.3f}")

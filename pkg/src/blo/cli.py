"""Command-line front end.

Subcommands: run (config-driven experiment), gradcheck (exact-gradient
cross-check), variance (Monte Carlo variance ratios), bench (thread sweep
with allocation accounting). Exit codes: 0 ok, 1 config error, 2 divergence,
3 tolerance breach. BLO_THREADS caps intra-run parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import ExperimentConfig, dump_config, load_config
from .errors import ConfigError, DivergenceError, InvalidArgument
from .harness import (
    bench_csv,
    bench_estimate,
    gradcheck,
    gradcheck_problem,
    variance_csv,
    variance_study,
)
from .io import write_blo1
from .meta_opt import TrainingDiverged, run_training
from .problems import DistillationProblem, PdeDiscoveryProblem

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_TOLERANCE = 3


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.out:
        config.output_dir = args.out
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = config.problem.build()
    phi0 = None
    if config.phi_seed is not None:
        phi0 = problem.initial_phi(config.phi_seed)
    started = time.time()
    diverged = False
    try:
        phi, record = run_training(
            problem, config.schedule, config.estimator,
            optimizer_kind=config.optimizer_kind, step_size=config.step_size,
            master_seed=config.master_seed, phi0=phi0, threads=args.threads,
        )
    except TrainingDiverged as exc:
        print(f"run diverged: {exc}", file=sys.stderr)
        phi, record = exc.phi, exc.record
        diverged = True
    record.to_csv(out / "run.csv")
    write_blo1(out / "final_phi.bin", phi)
    dump_config(config, out / "resolved_config.json")
    if isinstance(problem, PdeDiscoveryProblem):
        write_blo1(out / "reference_field.bin", problem.reference_field)
    if isinstance(problem, DistillationProblem):
        write_blo1(out / "dataset_x.bin", problem.train_x)
        write_blo1(out / "dataset_y.bin", problem.train_y.astype(float))
    meta = {
        "started_unix": started,
        "elapsed_seconds": time.time() - started,
        "diverged": diverged,
        "steps_recorded": len(record.rows),
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return EXIT_DIVERGENCE if diverged else EXIT_OK


def _cmd_gradcheck(args) -> int:
    problem, fd_tol = gradcheck_problem(args.problem, args.seed)
    report = gradcheck(problem, args.T, args.seed, fd_tol=fd_tol)
    print(report.render())
    return EXIT_OK if report.passed else EXIT_TOLERANCE


def _cmd_variance(args) -> int:
    b_values = [int(x) for x in args.b.split(",") if x]
    rows = variance_study(args.n, b_values, args.samples, seed=args.seed)
    csv_text = variance_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text)
    print(csv_text, end="")
    bad = [r for r in rows if r.confidence == "ok" and not r.within(args.tol)]
    for r in rows:
        if r.confidence == "low":
            print(f"note: row b={r.b} is low-confidence ({args.samples} samples), not gated",
                  file=sys.stderr)
    if bad:
        for r in bad:
            print(f"tolerance breach: b={r.b} empirical {r.empirical_ratio:.3f} "
                  f"vs predicted {r.predicted_ratio:.3f}", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def _cmd_bench(args) -> int:
    config = load_config(args.config)
    problem = config.problem.build()
    phi = problem.initial_phi(config.phi_seed if config.phi_seed is not None else config.master_seed)
    threads_list = [int(x) for x in args.threads.split(",") if x]
    tag = config.schedule.phase2.tag
    rows = [
        bench_estimate(problem, tag, config.estimator, phi, config.master_seed,
                       threads=t, repeats=args.repeats)
        for t in threads_list
    ]
    csv_text = bench_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text)
    print(csv_text, end="")
    digests = {r.grad_digest for r in rows}
    if len(digests) > 1:
        print("estimates are not bit-identical across thread counts", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a config-driven experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="override the config's output directory")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.set_defaults(func=_cmd_run)

    p_gc = sub.add_parser("gradcheck", help="cross-check exact gradient paths")
    p_gc.add_argument("--problem", default="quadratic")
    p_gc.add_argument("--T", type=int, default=5)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.set_defaults(func=_cmd_gradcheck)

    p_var = sub.add_parser("variance", help="Monte Carlo variance-ratio study")
    p_var.add_argument("--n", type=int, required=True)
    p_var.add_argument("--b", required=True, help="comma-separated batch sizes")
    p_var.add_argument("--samples", type=int, required=True)
    p_var.add_argument("--seed", type=int, default=0)
    p_var.add_argument("--tol", type=float, default=0.05)
    p_var.add_argument("--out", default=None)
    p_var.set_defaults(func=_cmd_variance)

    p_bench = sub.add_parser("bench", help="thread sweep with allocation accounting")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--threads", required=True, help="comma-separated thread counts")
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--out", default=None)
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configuration: strict JSON validation and lossless round-trips.

Every block rejects unknown keys and enforces ranges before any compute
starts, so a typo fails with exit code 1 and a message naming the key.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .core import Distribution
from .errors import ConfigError
from .meta_opt import ESTIMATOR_TAGS, EstimatorSettings, Phase, PhaseSchedule
from .problems import EQUATIONS, DistillationProblem, PdeDiscoveryProblem, QuadraticBilevel

_PROBLEM_KINDS = ("quadratic", "distillation", "pde")


def _require_keys(block: dict, allowed: dict, context: str) -> dict:
    """Check unknown keys and fill defaults; `allowed` maps key -> default
    (REQUIRED sentinel for mandatory keys)."""
    out = {}
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{context}: unknown key '{key}'")
    for key, default in allowed.items():
        if key in block:
            out[key] = block[key]
        elif default is _REQUIRED:
            raise ConfigError(f"{context}: missing required key '{key}'")
        else:
            out[key] = default
    return out


_REQUIRED = object()


def _check(cond: bool, message: str):
    if not cond:
        raise ConfigError(message)


@dataclass
class ProblemConfig:
    kind: str
    params: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(block: dict) -> "ProblemConfig":
        _check(isinstance(block, dict), "problem: must be an object")
        kind = block.get("kind")
        _check(kind in _PROBLEM_KINDS, f"problem.kind: must be one of {_PROBLEM_KINDS}")
        params = {k: v for k, v in block.items() if k != "kind"}
        if kind == "quadratic":
            params = _require_keys(params, {
                "m": 3, "n": 2, "seed": 0, "cond": 10.0, "eta": None, "ridge": 0.1,
            }, "problem(quadratic)")
            _check(params["m"] >= 1 and params["n"] >= 1, "problem.m/problem.n: must be >= 1")
            _check(params["cond"] >= 1.0, "problem.cond: must be >= 1")
            _check(params["ridge"] >= 0.0, "problem.ridge: must be >= 0")
        elif kind == "distillation":
            params = _require_keys(params, {
                "classes": 4, "features": 8, "ipc": 1, "n_per_class": 100,
                "eta": 0.5, "model": "softmax_linear", "hidden": 16,
                "class_sep": 2.0, "noise": 1.0, "data_seed": 0, "init_seed": 1,
            }, "problem(distillation)")
            _check(params["model"] in ("softmax_linear", "one_hidden"),
                   "problem.model: must be 'softmax_linear' or 'one_hidden'")
            _check(params["eta"] > 0, "problem.eta: must be > 0")
        else:
            params = _require_keys(params, {
                "equation": _REQUIRED, "nu_true": None, "nx": 256, "nt": 512,
            }, "problem(pde)")
            _check(params["equation"] in EQUATIONS, f"problem.equation: must be one of {EQUATIONS}")
            _check(params["nx"] >= 8 and params["nt"] >= 2, "problem.nx/problem.nt: grid too small")
        return ProblemConfig(kind=kind, params=params)

    def build(self):
        p = self.params
        if self.kind == "quadratic":
            kwargs = {k: p[k] for k in ("m", "n", "seed", "cond", "ridge")}
            if p["eta"] is not None:
                kwargs["eta"] = p["eta"]
            return QuadraticBilevel.random(**kwargs)
        if self.kind == "distillation":
            return DistillationProblem.synthetic(**p)
        return PdeDiscoveryProblem(equation=p["equation"], nu_true=p["nu_true"],
                                   grid=(p["nx"], p["nt"]))


@dataclass
class ExperimentConfig:
    problem: ProblemConfig
    estimator: EstimatorSettings
    schedule: PhaseSchedule
    optimizer_kind: str
    step_size: float
    master_seed: int
    phi_seed: int | None
    output_dir: str

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        _check(isinstance(raw, dict), "config: top level must be an object")
        top = _require_keys(raw, {
            "problem": _REQUIRED, "estimator": {}, "schedule": _REQUIRED,
            "optimizer": {}, "seeds": {}, "output_dir": "runs/out",
        }, "config")

        problem = ProblemConfig.from_dict(top["problem"])

        est = _require_keys(top["estimator"], {
            "b": 4, "T": 10, "mu": 1e-4, "alpha": 1.0, "K": 20,
            "s": None, "truncated_s": None, "distribution": "rademacher",
            "accumulation": 1,
        }, "estimator")
        _check(est["b"] >= 1, "estimator.b: must be >= 1")
        _check(est["T"] >= 0, "estimator.T: must be >= 0")
        _check(est["mu"] > 0, "estimator.mu: must be > 0")
        _check(est["K"] >= 0, "estimator.K: must be >= 0")
        _check(est["accumulation"] >= 1, "estimator.accumulation: must be >= 1")
        try:
            distribution = Distribution(est["distribution"])
        except ValueError:
            raise ConfigError("estimator.distribution: must be rademacher|gaussian|coordinate")
        settings = EstimatorSettings(
            T=est["T"], b=est["b"], distribution=distribution, mu=est["mu"],
            alpha=est["alpha"], K=est["K"], s=est["s"],
            truncated_s=est["truncated_s"], accumulation=est["accumulation"],
        )

        sched = _require_keys(top["schedule"], {"phase1": None, "phase2": _REQUIRED}, "schedule")

        def parse_phase(block, context):
            if block is None:
                return None
            got = _require_keys(block, {"tag": _REQUIRED, "steps": _REQUIRED}, context)
            _check(got["tag"] in ESTIMATOR_TAGS, f"{context}.tag: must be one of {ESTIMATOR_TAGS}")
            _check(isinstance(got["steps"], int) and got["steps"] >= 0,
                   f"{context}.steps: must be an integer >= 0")
            return Phase(got["tag"], got["steps"])

        schedule = PhaseSchedule(
            phase1=parse_phase(sched["phase1"], "schedule.phase1"),
            phase2=parse_phase(sched["phase2"], "schedule.phase2"),
        )

        opt = _require_keys(top["optimizer"], {"kind": "gd", "step_size": 0.1}, "optimizer")
        _check(opt["kind"] in ("gd", "adam"), "optimizer.kind: must be 'gd' or 'adam'")
        _check(opt["step_size"] > 0, "optimizer.step_size: must be > 0")

        seeds = _require_keys(top["seeds"], {"master": 0, "phi_init": None}, "seeds")

        _check(isinstance(top["output_dir"], str) and top["output_dir"],
               "output_dir: must be a non-empty string")

        return ExperimentConfig(
            problem=problem, estimator=settings, schedule=schedule,
            optimizer_kind=opt["kind"], step_size=opt["step_size"],
            master_seed=seeds["master"], phi_seed=seeds["phi_init"],
            output_dir=top["output_dir"],
        )

    def to_dict(self) -> dict:
        est = self.estimator
        return {
            "problem": {"kind": self.problem.kind, **self.problem.params},
            "estimator": {
                "b": est.b, "T": est.T, "mu": est.mu, "alpha": est.alpha, "K": est.K,
                "s": est.s, "truncated_s": est.truncated_s,
                "distribution": est.distribution.value, "accumulation": est.accumulation,
            },
            "schedule": {
                "phase1": None if self.schedule.phase1 is None else asdict(self.schedule.phase1),
                "phase2": asdict(self.schedule.phase2),
            },
            "optimizer": {"kind": self.optimizer_kind, "step_size": self.step_size},
            "seeds": {"master": self.master_seed, "phi_init": self.phi_seed},
            "output_dir": self.output_dir,
        }


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return ExperimentConfig.from_dict(raw)


def dump_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

import json

import numpy as np
import pytest

from blo.config import ExperimentConfig, dump_config, load_config
from blo.errors import ConfigError, InvalidArgument
from blo.io import read_blo1, write_blo1
from blo.problems import DistillationProblem, PdeDiscoveryProblem, QuadraticBilevel


def minimal_config(**overrides):
    raw = {
        "problem": {"kind": "quadratic", "m": 3, "n": 2, "seed": 0},
        "schedule": {"phase2": {"tag": "fg2u", "steps": 5}},
    }
    raw.update(overrides)
    return raw


class TestBlo1Format:
    def test_vector_roundtrip(self, tmp_path):
        path = tmp_path / "v.bin"
        vec = np.array([1.0, -2.5, np.pi, 1e-300])
        write_blo1(path, vec)
        assert np.array_equal(read_blo1(path), vec)

    def test_matrix_roundtrip(self, tmp_path):
        path = tmp_path / "m.bin"
        mat = np.arange(12, dtype=float).reshape(3, 4) / 7.0
        write_blo1(path, mat)
        back = read_blo1(path)
        assert back.shape == (3, 4) and np.array_equal(back, mat)

    def test_header_contents(self, tmp_path):
        path = tmp_path / "h.bin"
        write_blo1(path, np.zeros((2, 3)))
        raw = path.read_bytes()
        assert raw[:4] == b"BLO1"
        assert int.from_bytes(raw[4:8], "little") == 2
        assert int.from_bytes(raw[8:12], "little") == 2
        assert int.from_bytes(raw[12:16], "little") == 3

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(InvalidArgument):
            read_blo1(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.bin"
        write_blo1(path, np.zeros(4))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(InvalidArgument):
            read_blo1(path)


class TestConfigValidation:
    def test_minimal_config_parses(self):
        cfg = ExperimentConfig.from_dict(minimal_config())
        assert cfg.schedule.phase2.steps == 5
        assert cfg.estimator.b == 4  # default

    def test_unknown_top_level_key_named(self):
        with pytest.raises(ConfigError, match="wibble"):
            ExperimentConfig.from_dict(minimal_config(wibble=1))

    def test_unknown_estimator_key_named(self):
        with pytest.raises(ConfigError, match="bb"):
            ExperimentConfig.from_dict(minimal_config(estimator={"bb": 3}))

    def test_bad_b_named(self):
        with pytest.raises(ConfigError, match="estimator.b"):
            ExperimentConfig.from_dict(minimal_config(estimator={"b": 0}))

    def test_bad_distribution(self):
        with pytest.raises(ConfigError, match="distribution"):
            ExperimentConfig.from_dict(minimal_config(estimator={"distribution": "cauchy"}))

    def test_bad_phase_tag(self):
        with pytest.raises(ConfigError, match="schedule.phase2.tag"):
            ExperimentConfig.from_dict(
                minimal_config(schedule={"phase2": {"tag": "sgd", "steps": 1}})
            )

    def test_missing_problem_kind(self):
        with pytest.raises(ConfigError, match="problem.kind"):
            ExperimentConfig.from_dict({"problem": {}, "schedule": {"phase2": {"tag": "fg2u", "steps": 1}}})

    def test_roundtrip_lossless(self):
        raw = minimal_config(
            estimator={"b": 7, "T": 12, "mu": 1e-5, "distribution": "gaussian",
                       "accumulation": 3},
            optimizer={"kind": "adam", "step_size": 0.01},
            seeds={"master": 9, "phi_init": 4},
            output_dir="runs/x",
        )
        cfg = ExperimentConfig.from_dict(raw)
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(cfg.to_dict(), sort_keys=True)

    def test_file_roundtrip(self, tmp_path):
        cfg = ExperimentConfig.from_dict(minimal_config())
        path = tmp_path / "c.json"
        dump_config(cfg, path)
        assert load_config(path) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)


class TestProblemBuilders:
    def test_quadratic_build(self):
        cfg = ExperimentConfig.from_dict(minimal_config())
        problem = cfg.problem.build()
        assert isinstance(problem, QuadraticBilevel)
        assert problem.n_inner == 3 and problem.n_meta == 2

    def test_distillation_build(self):
        raw = minimal_config(problem={"kind": "distillation", "classes": 3, "features": 4})
        problem = ExperimentConfig.from_dict(raw).problem.build()
        assert isinstance(problem, DistillationProblem)
        assert problem.n_meta == 12

    def test_pde_build(self):
        raw = minimal_config(problem={"kind": "pde", "equation": "allen_cahn",
                                      "nx": 64, "nt": 64})
        problem = ExperimentConfig.from_dict(raw).problem.build()
        assert isinstance(problem, PdeDiscoveryProblem)
        assert problem.nu_true == 0.001

    def test_pde_requires_equation(self):
        with pytest.raises(ConfigError, match="equation"):
            ExperimentConfig.from_dict(minimal_config(problem={"kind": "pde"}))

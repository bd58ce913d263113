from pathlib import Path

import numpy as np
import orjson
import pytest

from application.services.sampling.rollout import rollout
from application.services.schedule_service import uniform_grid
from application.services.velocity import DeltaOracle, MlpVelocityField
from core.exceptions import ConfigurationError, OutputConflictError
from domain.entities.experiment import ExperimentCommand, VelocityKind
from domain.entities.sampler import SamplerKind
from domain.entities.schedule import SigmaKind
from domain.entities.velocity import DataKind, MlpArchitecture
from infrastructure.storage.artifact_repository_impl import TRAJECTORY_HEADER, FileArtifactRepository, format_cell
from infrastructure.storage.config_loader import (
    load_experiment_config,
    parse_experiment_config,
    parse_sampler,
    split_top_level,
)
from infrastructure.storage.model_repository_impl import FileModelRepository

AUDIT_INI = """
[experiment]
command = audit
output_dir = runs/audit
seed = 7

[schedule]
grids = uniform(4), uniform(16), uniform(1000)   # audit lattice

[samplers]
list = cps(0.9); flow_sde(dance, 0.3); cpws(cps_eta, 0.5); patched(0.7); ode

[velocity]
kind = delta
center = 1, 1
"""


def test_model_file_layout(tmp_path):
    arch = MlpArchitecture(data_dim=2, hidden=[3, 2], activation="relu")
    field = MlpVelocityField.initialize(arch, np.random.default_rng(0))
    repository = FileModelRepository()
    path = repository.save(field.to_stored(), tmp_path / "model.bin", {"seed": "1", "steps": "10"})

    raw = path.read_bytes()
    header, body = raw.split(b"\n", 1)
    assert header == f"flowcps-mlp v1 data_dim=2 hidden=3,2 activation=relu params={arch.param_count}".encode()
    assert len(body) == 8 * arch.param_count

    loaded = MlpVelocityField.from_stored(repository.load(path))
    assert loaded.architecture == arch
    np.testing.assert_array_equal(loaded.params, field.params)
    assert repository.load_metadata(path) == {"seed": "1", "steps": "10"}
    assert (tmp_path / "model.meta").read_text() == "seed=1\nsteps=10\n"


def test_truncated_model_is_rejected(tmp_path):
    field = MlpVelocityField.initialize(MlpArchitecture(hidden=[4]), np.random.default_rng(0))
    path = FileModelRepository().save(field.to_stored(), tmp_path / "model.bin", {})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        FileModelRepository().load(path)


def test_prepare_refuses_non_empty_directory(tmp_path):
    (tmp_path / "old.csv").write_text("x")
    repository = FileArtifactRepository(tmp_path)
    with pytest.raises(OutputConflictError):
        repository.prepare()
    repository.prepare(force=True)
    FileArtifactRepository(tmp_path / "fresh").prepare()
    assert (tmp_path / "fresh").is_dir()


def test_csv_uses_full_precision(tmp_path):
    repository = FileArtifactRepository(tmp_path)
    repository.write_csv("values.csv", ["a", "b", "c", "d"], [[0.1, 3, None, "ok"], [1 / 3, np.float64(2.5), True, "x"]])
    lines = (tmp_path / "values.csv").read_text().splitlines()
    assert lines[0] == "a,b,c,d"
    assert lines[1] == "0.10000000000000001,3,,ok"
    assert float(lines[2].split(",")[0]) == 1 / 3
    assert format_cell(np.float64(0.1)) == "0.10000000000000001"


def test_json_is_sorted_and_numpy_aware(tmp_path):
    repository = FileArtifactRepository(tmp_path)
    repository.write_json("summary.json", {"b": np.array([1.0, 2.0]), "a": 1})
    text = (tmp_path / "summary.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert orjson.loads(text) == {"a": 1, "b": [1.0, 2.0]}


def test_trajectory_dump(tmp_path):
    traj = rollout(SamplerKind.cps(0.5), DeltaOracle([1.0, 0.0]), uniform_grid(4), seed=0)
    repository = FileArtifactRepository(tmp_path)
    repository.write_trajectory("cps", traj, with_states=True)

    lines = (tmp_path / "cps.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_HEADER)
    assert len(lines) == 5
    raw = (tmp_path / "cps.states").read_bytes()
    header, body = raw.split(b"\n", 1)
    assert header == b"states 5 2"
    states = np.frombuffer(body, dtype="<f8").reshape(5, 2)
    np.testing.assert_array_equal(states[-1], traj.terminal)


def test_parse_audit_config(tmp_path):
    config = parse_experiment_config(AUDIT_INI, tmp_path)
    assert config.command == ExperimentCommand.AUDIT
    assert config.seed == 7
    assert [grid.K for grid in config.grids] == [4, 16, 1000]
    assert [s.label for s in config.samplers] == [
        "cps-0.9",
        "flow_sde-dance_grpo-0.3",
        "cpws-cps_eta-0.5",
        "patched_sde-0.7",
        "ode",
    ]
    assert config.velocity.kind == VelocityKind.DELTA
    assert config.velocity.center == [1.0, 1.0]


def test_seed_override_and_requirement(tmp_path):
    assert parse_experiment_config(AUDIT_INI, tmp_path, seed=99).seed == 99
    with pytest.raises(ConfigurationError):
        parse_experiment_config(AUDIT_INI.replace("seed = 7\n", ""), tmp_path)


def test_parse_grpo_config(tmp_path):
    text = """
[experiment]
command = compare
output_dir = out
seed = 1

[schedule]
grid = uniform(8)

[samplers]
list = cps(0.7), flow_sde(dance, 0.7)

[velocity]
data = mixture
data_centers = -2, 0; 2, 0
data_std = 0.3
hidden = 16, 16
steps = 100
final_lr = 0.001

[grpo]
group_size = 8
iters = 5
max_grad_norm = off

[reward]
kind = neg_distance
target = 2, 0
"""
    config = parse_experiment_config(text, tmp_path)
    assert config.velocity.data.kind == DataKind.MIXTURE
    assert config.velocity.data.centers == [[-2.0, 0.0], [2.0, 0.0]]
    assert config.velocity.architecture.hidden == [16, 16]
    assert config.velocity.final_lr == 0.001
    with pytest.raises(ConfigurationError):
        parse_experiment_config(text.replace("final_lr = 0.001", "final_lr = 0.5"), tmp_path)
    assert config.grpo.max_grad_norm is None
    grpo = config.grpo.for_sampler(config.samplers[1], config.seed)
    assert grpo.G == 8 and grpo.sampler.sigma_kind == SigmaKind.DANCE_GRPO


@pytest.mark.parametrize(
    "edit",
    [
        ("list = cps(0.9); flow_sde(dance, 0.3); cpws(cps_eta, 0.5); patched(0.7); ode", "list ="),
        ("kind = delta", "kind = nonsense"),
        ("[velocity]", "[mystery]"),
        ("center = 1, 1", "centre = 1, 1"),
        ("grids = uniform(4), uniform(16), uniform(1000)", "grids = uniform(0)"),
        ("cps(0.9)", "cps(1.9)"),
        ("flow_sde(dance, 0.3)", "flow_sde(hurricane, 0.3)"),
        ("seed = 7", "seed = seven"),
    ],
)
def test_invalid_configs_are_usage_errors(tmp_path, edit):
    old, new = edit
    with pytest.raises(ConfigurationError):
        parse_experiment_config(AUDIT_INI.replace(old, new), tmp_path)


def test_missing_model_file_is_rejected(tmp_path):
    text = AUDIT_INI.replace("kind = delta", "kind = mlp\nmodel = missing.bin")
    with pytest.raises(ConfigurationError):
        parse_experiment_config(text, tmp_path)


def test_split_top_level_respects_parentheses():
    assert split_top_level("cps(0.9), flow_sde(dance, 0.3); ode") == ["cps(0.9)", "flow_sde(dance, 0.3)", "ode"]


def test_parse_sampler_rule_aliases():
    assert parse_sampler("flow_sde(flow, 0.7)").sigma_kind == SigmaKind.FLOW_GRPO
    assert parse_sampler("cpws(dance_grpo, 0.2)").sigma_kind == SigmaKind.DANCE_GRPO
    with pytest.raises(ConfigurationError):
        parse_sampler("ddim_ref")


def test_manifest_reloads_the_same_config(tmp_path):
    config = parse_experiment_config(AUDIT_INI, tmp_path)
    repository = FileArtifactRepository(tmp_path)
    path = repository.write_manifest(config)
    manifest = orjson.loads(path.read_bytes())
    assert manifest["seed"] == 7 and manifest["command"] == "audit"
    assert load_experiment_config(path) == config
    assert load_experiment_config(path, seed=3).seed == 3


@pytest.mark.parametrize("path", sorted(Path(__file__).parent.joinpath("data", "configs").glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    config = load_experiment_config(path)
    assert config.command.value in path.stem
    assert config.seed == 0

"""
INI experiment configs.

Sections and keys are documented in README.md. Values use a small call syntax
for grids and samplers, e.g. `grids = uniform(4), uniform(16)` and
`list = cps(0.9); flow_sde(dance, 0.3)`. Full-line comments start with `;` or
`#`; inline comments only with `#`.

A manifest.json written by a previous run is accepted in place of an INI file
and reproduces that run's resolved config.
"""

import configparser
import logging
import re
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import orjson
from pydantic import ValidationError

from application.services.schedule_service import uniform_grid
from core.exceptions import ConfigurationError, FlowCpsError
from domain.entities.experiment import (
    AuditSection,
    ExperimentConfig,
    GrpoSection,
    VelocityKind,
    VelocitySection,
)
from domain.entities.grpo import RewardSpec
from domain.entities.sampler import SamplerKind
from domain.entities.schedule import SigmaKind, TimeGrid
from domain.entities.velocity import DataKind, DataSpec, MlpArchitecture

logger = logging.getLogger(__name__)

ALLOWED_KEYS: Dict[str, set] = {
    "experiment": {"command", "output_dir", "seed"},
    "schedule": {"grid", "grids"},
    "samplers": {"list"},
    "velocity": {
        "kind", "center", "scale", "model", "data", "data_center", "data_scale", "data_centers",
        "data_std", "data_dim", "hidden", "activation", "steps", "lr", "final_lr", "momentum", "batch_size",
    },
    "grpo": set(GrpoSection.model_fields),
    "reward": {"kind", "target", "radius"},
    "audit": set(AuditSection.model_fields),
}

SIGMA_RULE_TOKENS = {
    "flow": SigmaKind.FLOW_GRPO,
    "dance": SigmaKind.DANCE_GRPO,
    "cps_eta": SigmaKind.CPS_ETA,
    "patched": SigmaKind.PATCHED_ETA,
    **{kind.value: kind for kind in SigmaKind},
}

_CALL = re.compile(r"^([a-z_]+)\s*(?:\((.*)\))?$")


def split_top_level(text: str, separators: str = ";,") -> List[str]:
    """Split on separators that are not inside parentheses, dropping empty items"""
    parts, current, depth = [], [], 0
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ConfigurationError(f"Unbalanced parentheses in {text!r}")
        if ch in separators and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if depth != 0:
        raise ConfigurationError(f"Unbalanced parentheses in {text!r}")
    parts.append("".join(current))
    return [p.strip() for p in parts if p.strip()]


def parse_call(token: str):
    match = _CALL.match(token.strip())
    if match is None:
        raise ConfigurationError(f"Cannot parse {token!r}")
    name, args = match.group(1), match.group(2)
    return name, ([] if args is None else [a.strip() for a in args.split(",")])


def parse_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigurationError(f"Expected comma-separated numbers, got {text!r}") from e


def parse_points(text: str) -> List[List[float]]:
    return [parse_floats(point) for point in text.split(";") if point.strip()]


def parse_grid(token: str) -> TimeGrid:
    name, args = parse_call(token)
    try:
        if name == "uniform" and len(args) == 1:
            return uniform_grid(int(args[0]))
        if name == "steps" and args:
            return TimeGrid(steps=[float(a) for a in args])
    except (ValueError, FlowCpsError) as e:
        raise ConfigurationError(f"Invalid grid {token!r}: {e}") from e
    raise ConfigurationError(f"Unknown grid {token!r}; use uniform(K) or steps(1, ..., 0)")


def parse_sampler(token: str) -> SamplerKind:
    name, args = parse_call(token)
    try:
        if name == "ode" and not args:
            return SamplerKind.ode()
        if name == "cps" and len(args) == 1:
            return SamplerKind.cps(float(args[0]))
        if name == "patched" and len(args) == 1:
            return SamplerKind.patched(float(args[0]))
        if name in ("flow_sde", "cpws") and len(args) == 2:
            rule = SIGMA_RULE_TOKENS.get(args[0])
            if rule is None:
                raise ConfigurationError(f"Unknown sigma rule {args[0]!r} in {token!r}")
            build = SamplerKind.flow_sde if name == "flow_sde" else SamplerKind.cpws
            return build(rule, float(args[1]))
    except (ValueError, ValidationError) as e:
        raise ConfigurationError(f"Invalid sampler {token!r}: {e}") from e
    raise ConfigurationError(f"Unknown sampler {token!r}")


class _Section:
    """Typed access to one INI section with section.key in error messages"""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.values = dict(parser[name]) if parser.has_section(name) else {}

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, convert: Callable[[str], Any] = str, default: Any = None) -> Any:
        if key not in self.values:
            return default
        raw = self.values[key].strip()
        try:
            return convert(raw)
        except ConfigurationError:
            raise
        except ValueError as e:
            raise ConfigurationError(f"[{self.name}] {key} = {raw!r}: {e}") from e

    def require(self, key: str, convert: Callable[[str], Any] = str) -> Any:
        if key not in self.values:
            raise ConfigurationError(f"[{self.name}] {key} is required")
        return self.get(key, convert)

    def present(self, mapping: Dict[str, Callable[[str], Any]]) -> Dict[str, Any]:
        return {key: self.get(key, convert) for key, convert in mapping.items() if key in self.values}


def _parse_velocity(section: _Section, base_dir: Path) -> VelocitySection:
    data = None
    if "data" in section:
        data_fields = section.present({
            "data_center": parse_floats,
            "data_scale": float,
            "data_centers": parse_points,
            "data_std": float,
        })
        data = DataSpec(
            kind=section.get("data"),
            **{key[len("data_"):]: value for key, value in data_fields.items()},
        )

    center = section.get("center", parse_floats)
    data_dim = section.get("data_dim", int)
    if data_dim is None:
        if data is not None and data.kind != DataKind.GAUSSIAN:
            data_dim = data.dimension()
        elif center:
            data_dim = len(center)
        else:
            data_dim = 2
    arch_fields = section.present({"hidden": lambda v: [int(w) for w in v.split(",")], "activation": str})
    architecture = MlpArchitecture(data_dim=data_dim, **arch_fields)

    model = section.get("model")
    if model is not None:
        model_path = Path(model)
        if not model_path.is_absolute():
            model_path = base_dir / model_path
        if not model_path.is_file():
            raise ConfigurationError(f"[velocity] model file {model_path} does not exist")
        model = str(model_path)

    return VelocitySection(
        kind=section.get("kind", str, VelocityKind.MLP.value),
        center=center,
        model=model,
        data=data,
        architecture=architecture,
        **section.present({
            "scale": float,
            "steps": int,
            "lr": float,
            "final_lr": _optional_float,
            "momentum": float,
            "batch_size": int,
        }),
    )


def _optional_float(raw: str) -> Optional[float]:
    return None if raw.lower() in ("", "none", "off") else float(raw)


def parse_experiment_config(text: str, base_dir: Path = Path("."), seed: Optional[int] = None) -> ExperimentConfig:
    """Parse INI text; `seed` (from the command line) overrides [experiment] seed"""
    parser = configparser.ConfigParser(
        comment_prefixes=(";", "#"),
        inline_comment_prefixes=("#",),
        interpolation=None,
    )
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"Malformed config: {e}") from e

    for name in parser.sections():
        if name not in ALLOWED_KEYS:
            raise ConfigurationError(f"Unknown section [{name}]")
        unknown = set(parser[name]) - ALLOWED_KEYS[name]
        if unknown:
            raise ConfigurationError(f"Unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")

    experiment = _Section(parser, "experiment")
    schedule = _Section(parser, "schedule")
    samplers = _Section(parser, "samplers")

    if seed is None:
        seed = experiment.get("seed", int)
    if seed is None:
        raise ConfigurationError("A seed is mandatory: set [experiment] seed or pass --seed")

    if "grids" in schedule:
        grids = [parse_grid(token) for token in split_top_level(schedule.get("grids"))]
    elif "grid" in schedule:
        grids = [parse_grid(schedule.get("grid"))]
    else:
        grids = []

    try:
        fields: Dict[str, Any] = {
            "command": experiment.require("command"),
            "output_dir": experiment.require("output_dir"),
            "seed": seed,
            "grids": grids,
            "samplers": [parse_sampler(token) for token in split_top_level(samplers.get("list", str, ""))],
            "velocity": _parse_velocity(_Section(parser, "velocity"), base_dir),
            "audit": AuditSection(**_Section(parser, "audit").present({
                "terminal_rollouts": int,
                "monte_carlo_draws": int,
                "vp_beta": _optional_float,
            })),
        }
        if parser.has_section("grpo"):
            fields["grpo"] = GrpoSection(**_Section(parser, "grpo").present({
                "group_size": int,
                "clip_eps": float,
                "kl_beta": float,
                "lr": float,
                "groups_per_iter": int,
                "iters": int,
                "max_grad_norm": _optional_float,
                "eval_batch": int,
            }))
        if parser.has_section("reward"):
            reward = _Section(parser, "reward")
            fields["reward"] = RewardSpec(
                kind=reward.require("kind"),
                target=reward.require("target", parse_floats),
                radius=reward.get("radius", float),
            )
        return ExperimentConfig(**fields)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid experiment config: {e}") from e


def load_experiment_config(path: Path, seed: Optional[int] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file {path} does not exist")

    if path.suffix == ".json":
        try:
            manifest = orjson.loads(path.read_bytes())
            data = dict(manifest["config"])
        except (orjson.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigurationError(f"{path} is not a flowcps manifest: {e}") from e
        if seed is not None:
            data["seed"] = seed
        try:
            config = ExperimentConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid manifest config: {e}") from e
    else:
        config = parse_experiment_config(path.read_text(encoding="utf-8"), path.parent, seed)

    logger.info(f"Loaded {config.command.value} config from {path} (seed={config.seed})")
    return config

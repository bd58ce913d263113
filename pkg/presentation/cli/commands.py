import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from application.services.dependency_injection import DependencyContainer
from core.config.settings import settings
from core.exceptions import ConfigurationError, OutputConflictError
from domain.entities.experiment import ExperimentCommand, ExperimentConfig
from infrastructure.storage.config_loader import load_experiment_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFLICT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.app_name,
        description="Noise-level audits, flow-matching pretraining and GRPO sampler comparisons",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    commands = parser.add_subparsers(dest="command", required=True)
    for command, help_text in (
        (ExperimentCommand.AUDIT, "write ideal vs actual noise-level curves"),
        (ExperimentCommand.PRETRAIN, "train an MLP velocity field by flow matching"),
        (ExperimentCommand.GRPO, "fine-tune a pretrained field with GRPO"),
        (ExperimentCommand.COMPARE, "run GRPO once per sampler and compare reward curves"),
    ):
        sub = commands.add_parser(command.value, help=help_text)
        sub.add_argument("--config", required=True, type=Path, help="INI config or a previous manifest.json")
        sub.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        sub.add_argument("--seed", type=int, help="override the config seed")
    return parser


def execute(config: ExperimentConfig, force: bool = False) -> None:
    container = DependencyContainer(Path(config.output_dir))
    container.artifacts.prepare(force)

    if config.command == ExperimentCommand.AUDIT:
        velocity = container.pretrain_use_cases().resolve_velocity(config)
        container.audit_use_cases().run(config, velocity)
    elif config.command == ExperimentCommand.PRETRAIN:
        container.pretrain_use_cases().run(config, container.artifacts)
    elif config.command == ExperimentCommand.GRPO:
        container.grpo_use_cases().run(config, container.artifacts)
    else:
        container.grpo_use_cases().compare(config, container.artifacts)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and map failures to exit statuses"""
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigurationError(f"--seed must be non-negative, got {args.seed}")
        config = load_experiment_config(args.config, seed=args.seed)
        if config.command.value != args.command:
            raise ConfigurationError(
                f"{args.config} configures '{config.command.value}', not '{args.command}'"
            )
        execute(config, force=args.force)
    except ConfigurationError as e:
        print(f"{settings.app_name}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OutputConflictError as e:
        print(f"{settings.app_name}: {e}", file=sys.stderr)
        return EXIT_CONFLICT
    except Exception as e:
        logger.exception(f"{args.command} failed")
        print(f"{settings.app_name}: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK

#!/usr/bin/env python3
"""
Runs a compare config once per seed and reports which sampler had the larger
area under the eval-reward curve in each replicate, with min/avg/max per variant.

    python scripts/run_replicates.py --config data/configs/compare_desk.ini --seeds 0,1,2,3,4
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List

# Add the project root to Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from application.services.dependency_injection import DependencyContainer
from core.config.settings import settings
from core.exceptions import ConfigurationError
from domain.entities.experiment import ExperimentCommand, ExperimentConfig
from infrastructure.storage.config_loader import load_experiment_config

logger = logging.getLogger(__name__)


def spread(values: List[float]) -> Dict[str, float]:
    return {"min": min(values), "avg": sum(values) / len(values), "max": max(values)}


def run_replicates(config: ExperimentConfig, seeds: List[int], force: bool = False) -> Dict[str, Any]:
    """One compare per seed under <output_dir>/seed_<s>, then replicates.json at the root"""
    if config.command != ExperimentCommand.COMPARE:
        raise ConfigurationError(f"Replicates need a compare config, got '{config.command.value}'")
    if not seeds:
        raise ConfigurationError("At least one seed is required")
    if any(seed < 0 for seed in seeds):
        raise ConfigurationError(f"Seeds must be non-negative, got {seeds}")

    root = DependencyContainer(Path(config.output_dir))
    root.artifacts.prepare(force)

    replicates = []
    for seed in seeds:
        seed_dir = Path(config.output_dir) / f"seed_{seed}"
        seeded = config.model_copy(update={"seed": seed, "output_dir": str(seed_dir)})
        container = DependencyContainer(seed_dir)
        container.artifacts.prepare(force)
        verdict = container.grpo_use_cases().compare(seeded, container.artifacts)
        replicates.append({
            "seed": seed,
            "auc": {label: v["auc"] for label, v in verdict["variants"].items()},
            "final_eval_reward": {label: v["final_eval_reward"] for label, v in verdict["variants"].items()},
            "best_by_auc": verdict.get("best_by_auc"),
        })
        logger.info(f"seed {seed}: best by AUC {verdict.get('best_by_auc')}")

    labels = [kind.label for kind in config.samplers]
    report = {
        "seeds": list(seeds),
        "replicates": replicates,
        "wins_by_auc": {label: sum(r["best_by_auc"] == label for r in replicates) for label in labels},
        "auc": {label: spread([r["auc"][label] for r in replicates]) for label in labels},
        "final_eval_reward": {label: spread([r["final_eval_reward"][label] for r in replicates]) for label in labels},
    }
    root.artifacts.write_json("replicates.json", report)
    return report


def print_report(report: Dict[str, Any]) -> None:
    for r in report["replicates"]:
        aucs = ", ".join(f"{label}={auc:.6f}" for label, auc in r["auc"].items())
        print(f"seed {r['seed']}: {aucs} -> {r['best_by_auc']}")
    print()
    for label, wins in report["wins_by_auc"].items():
        auc = report["auc"][label]
        print(f"{label}: wins {wins}/{len(report['seeds'])}, "
              f"AUC min {auc['min']:.6f} avg {auc['avg']:.6f} max {auc['max']:.6f}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--config", required=True, type=Path, help="compare INI config")
    parser.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    parser.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    args = parser.parse_args()

    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        report = run_replicates(load_experiment_config(args.config), seeds, args.force)
    except (ConfigurationError, ValueError) as e:
        print(f"run_replicates: {e}", file=sys.stderr)
        return 2
    print_report(report)
    return 0


if __name__ == "__main__":
    sys.exit(main())

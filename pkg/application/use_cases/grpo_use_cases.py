import logging
import math
from typing import Any, Dict, List, Optional

from application.services.grpo.trainer import RunArtifact, run_experiment
from application.services.velocity import MlpVelocityField
from application.use_cases.pretrain_use_cases import PretrainUseCases
from core.config.settings import settings
from domain.entities.experiment import ExperimentConfig
from domain.repositories.artifact_repository import ArtifactRepository
from domain.repositories.model_repository import ModelRepository

logger = logging.getLogger(__name__)

REWARD_HEADER = [
    "iter",
    "mean_train_reward",
    "mean_eval_reward",
    "clip_frac",
    "mean_ratio",
    "grad_norm",
    "objective",
    "kl",
    "eval_reward_std",
]


def run_summary(artifact: RunArtifact, aborted: bool = False) -> Dict[str, Any]:
    curve = artifact.eval_curve
    finished = math.isfinite(artifact.final_eval_reward)
    return {
        "sampler": artifact.config.sampler.label,
        "iters_completed": len(artifact.history),
        "initial_eval_reward": curve[0] if curve and math.isfinite(curve[0]) else None,
        "final_eval_reward": artifact.final_eval_reward if finished else None,
        "final_eval_std": artifact.final_eval_std if finished else None,
        "auc": artifact.auc if finished else None,
        "aborted": aborted,
    }


class GrpoUseCases:
    def __init__(self, pretrain_use_cases: PretrainUseCases, model_repository: ModelRepository):
        self.pretrain_use_cases = pretrain_use_cases
        self.model_repository = model_repository

    def write_run(self, artifacts: ArtifactRepository, artifact: RunArtifact, aborted: bool = False) -> Dict[str, Any]:
        artifacts.write_csv(
            "rewards.csv",
            REWARD_HEADER,
            ([getattr(row, key) for key in REWARD_HEADER] for row in artifact.history),
        )
        summary = run_summary(artifact, aborted)
        artifacts.write_json("summary.json", summary)
        self.model_repository.save(
            artifact.policy.to_stored(),
            artifacts.root / settings.model_filename,
            {"sampler": artifact.config.sampler.label, "iters": str(len(artifact.history)), "seed": str(artifact.config.seed)},
        )
        return summary

    def base_model(self, config: ExperimentConfig, artifacts: ArtifactRepository) -> MlpVelocityField:
        base, outcome = self.pretrain_use_cases.resolve_base_model(config)
        if outcome is not None:
            self.model_repository.save(
                base.to_stored(),
                artifacts.root / f"base_{settings.model_filename}",
                {"seed": str(config.seed), "final_loss": f"{outcome.final_loss:.17g}"},
            )
        return base

    def run_variant(self, config: ExperimentConfig, index: int, base: MlpVelocityField, artifacts: ArtifactRepository):
        sampler = config.samplers[index]
        grpo_config = config.grpo.for_sampler(sampler, config.seed)
        try:
            artifact = run_experiment(grpo_config, config.reward, base, config.grid)
        except Exception as e:
            partial = getattr(e, "partial", None)
            if partial is not None:
                self.write_run(artifacts, partial, aborted=True)
            logger.error(f"GRPO run with {sampler.label} failed: {e}")
            raise
        summary = self.write_run(artifacts, artifact)
        return artifact, summary

    def run(self, config: ExperimentConfig, artifacts: ArtifactRepository) -> Dict[str, Any]:
        """cmd_grpo: fine-tune with the first configured sampler"""
        artifacts.write_manifest(config)
        base = self.base_model(config, artifacts)
        _, summary = self.run_variant(config, 0, base, artifacts)
        logger.info(f"GRPO finished: final eval reward {summary['final_eval_reward']}")
        return summary

    def compare(self, config: ExperimentConfig, artifacts: ArtifactRepository) -> Dict[str, Any]:
        """
        cmd_compare: one run per sampler from the same base model and seed, then
        aligned eval curves and a verdict. On failure the finished variants and the
        failing one's partial log are flushed before re-raising.
        """
        artifacts.write_manifest(config)
        base = self.base_model(config, artifacts)
        runs: List[RunArtifact] = []
        summaries: Dict[str, Dict[str, Any]] = {}

        try:
            for index, sampler in enumerate(config.samplers):
                logger.info(f"compare: variant {index + 1}/{len(config.samplers)} {sampler.label}")
                artifact, summary = self.run_variant(config, index, base, artifacts.child(sampler.label))
                runs.append(artifact)
                summaries[sampler.label] = summary
        except Exception as e:
            artifacts.write_json("verdict.json", self.verdict(config, runs, summaries, error=str(e)))
            if runs:
                self.write_aligned(artifacts, runs)
            raise

        self.write_aligned(artifacts, runs)
        verdict = self.verdict(config, runs, summaries)
        artifacts.write_json("verdict.json", verdict)
        return verdict

    def write_aligned(self, artifacts: ArtifactRepository, runs: List[RunArtifact]) -> None:
        curves = [run.eval_curve for run in runs]
        length = max(len(c) for c in curves)
        rows = []
        for i in range(length):
            rows.append([i] + [c[i] if i < len(c) else None for c in curves])
        artifacts.write_csv(
            "rewards_aligned.csv",
            ["iter"] + [run.config.sampler.label for run in runs],
            rows,
        )

    def verdict(
        self,
        config: ExperimentConfig,
        runs: List[RunArtifact],
        summaries: Dict[str, Dict[str, Any]],
        error: Optional[str] = None,
    ) -> Dict[str, Any]:
        degenerate = len(config.samplers) < 2
        if degenerate:
            logger.warning("compare ran a single variant; the verdict is degenerate")
        initial = {run.config.sampler.label: run.eval_curve[0] for run in runs}
        verdict: Dict[str, Any] = {
            "variants": {
                label: {"auc": s["auc"], "final_eval_reward": s["final_eval_reward"], "initial_eval_reward": s["initial_eval_reward"]}
                for label, s in summaries.items()
            },
            "degenerate": degenerate,
            "initial_eval_equal": len(set(initial.values())) <= 1,
            "aborted": error is not None,
        }
        if error is not None:
            verdict["error"] = error
        if len(runs) >= 2 and error is None:
            verdict["best_by_auc"] = max(runs, key=lambda run: run.auc).config.sampler.label
            verdict["best_by_final_eval"] = max(runs, key=lambda run: run.final_eval_reward).config.sampler.label
        return verdict

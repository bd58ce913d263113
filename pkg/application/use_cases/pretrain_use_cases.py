import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import orjson

from application.services.velocity import DeltaOracle, GaussianOracle, MlpVelocityField, VelocityField
from application.services.velocity.data import make_data_sampler
from application.services.velocity.training_service import FlowMatchingTrainer, TrainingOutcome
from core.config.settings import settings
from core.exceptions import ConfigurationError
from domain.entities.experiment import ExperimentConfig, VelocityKind, VelocitySection
from domain.repositories.artifact_repository import ArtifactRepository
from domain.repositories.model_repository import ModelRepository

logger = logging.getLogger(__name__)


def training_metadata(section: VelocitySection, seed: int, outcome: TrainingOutcome) -> Dict[str, str]:
    return {
        "seed": str(seed),
        "steps": str(section.steps),
        "lr": repr(section.lr),
        "final_lr": "none" if section.final_lr is None else repr(section.final_lr),
        "momentum": repr(section.momentum),
        "batch_size": str(section.batch_size),
        "initial_loss": f"{outcome.initial_loss:.17g}",
        "final_loss": f"{outcome.final_loss:.17g}",
        "data": orjson.dumps(section.data.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS).decode(),
    }


class PretrainUseCases:
    def __init__(self, model_repository: ModelRepository):
        self.model_repository = model_repository

    def train(self, section: VelocitySection, seed: int) -> TrainingOutcome:
        if section.data is None:
            raise ConfigurationError("Pretraining needs a [velocity] data distribution")
        trainer = FlowMatchingTrainer(
            section.architecture,
            lr=section.lr,
            momentum=section.momentum,
            batch_size=section.batch_size,
            final_lr=section.final_lr,
        )
        data = make_data_sampler(section.data, section.architecture.data_dim)
        return trainer.fit(data, section.steps, seed)

    def run(self, config: ExperimentConfig, artifacts: ArtifactRepository) -> Path:
        """cmd_pretrain: train, then write the model, its sidecar and the loss curve"""
        artifacts.write_manifest(config)
        try:
            outcome = self.train(config.velocity, config.seed)
        except Exception as e:
            logger.error(f"Pretraining failed: {e}")
            raise

        artifacts.write_csv(
            "losses.csv",
            ["step", "loss"],
            ((step, loss) for step, loss in enumerate(outcome.losses)),
        )
        path = self.model_repository.save(
            outcome.field.to_stored(),
            artifacts.root / settings.model_filename,
            training_metadata(config.velocity, config.seed, outcome),
        )
        logger.info(
            f"Pretrained model saved to {path}: loss {outcome.initial_loss:.6f} -> {outcome.final_loss:.6f}"
        )
        return path

    def load_model(self, path: str) -> MlpVelocityField:
        return MlpVelocityField.from_stored(self.model_repository.load(Path(path)))

    def resolve_base_model(self, config: ExperimentConfig) -> Tuple[MlpVelocityField, Optional[TrainingOutcome]]:
        """Load the configured model, or pretrain one from the data spec with the run seed"""
        section = config.velocity
        if section.model is not None:
            field = self.load_model(section.model)
            logger.info(f"Loaded base model from {section.model}")
            return field, None
        outcome = self.train(section, config.seed)
        return outcome.field, outcome

    def resolve_velocity(self, config: ExperimentConfig) -> Optional[VelocityField]:
        """Velocity field for audits; None when an mlp has neither model nor data"""
        section = config.velocity
        if section.kind == VelocityKind.DELTA:
            return DeltaOracle(section.center)
        if section.kind == VelocityKind.GAUSSIAN:
            return GaussianOracle(section.scale, section.architecture.data_dim)
        if section.model is None and section.data is None:
            return None
        return self.resolve_base_model(config)[0]

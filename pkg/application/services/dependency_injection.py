from pathlib import Path

from application.use_cases.audit_use_cases import AuditUseCases
from application.use_cases.grpo_use_cases import GrpoUseCases
from application.use_cases.pretrain_use_cases import PretrainUseCases
from infrastructure.storage.artifact_repository_impl import FileArtifactRepository
from infrastructure.storage.model_repository_impl import FileModelRepository


def get_artifact_repository(output_dir: Path) -> FileArtifactRepository:
    return FileArtifactRepository(Path(output_dir))


def get_pretrain_use_cases() -> PretrainUseCases:
    return PretrainUseCases(FileModelRepository())


def get_audit_use_cases(output_dir: Path) -> AuditUseCases:
    return AuditUseCases(get_artifact_repository(output_dir))


def get_grpo_use_cases() -> GrpoUseCases:
    model_repository = FileModelRepository()
    return GrpoUseCases(PretrainUseCases(model_repository), model_repository)


class DependencyContainer:
    """Dependency injection container for one command run"""

    def __init__(self, output_dir: Path):
        self._output_dir = Path(output_dir)
        self._artifacts = None

    @property
    def artifacts(self) -> FileArtifactRepository:
        if self._artifacts is None:
            self._artifacts = get_artifact_repository(self._output_dir)
        return self._artifacts

    def pretrain_use_cases(self) -> PretrainUseCases:
        return get_pretrain_use_cases()

    def audit_use_cases(self) -> AuditUseCases:
        return AuditUseCases(self.artifacts)

    def grpo_use_cases(self) -> GrpoUseCases:
        return get_grpo_use_cases()

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict

from domain.entities.velocity import StoredModel


class ModelRepository(ABC):

    @abstractmethod
    def save(self, model: StoredModel, path: Path, metadata: Dict[str, str]) -> Path:
        """Write the model file and its metadata sidecar, return the model path"""
        pass

    @abstractmethod
    def load(self, path: Path) -> StoredModel:
        """Read a model file written by save"""
        pass

    @abstractmethod
    def load_metadata(self, path: Path) -> Dict[str, str]:
        """Read the metadata sidecar of a model file"""
        pass

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Iterable, Sequence

from domain.entities.experiment import ExperimentConfig
from domain.entities.sampler import Trajectory


class ArtifactRepository(ABC):
    """Output directory of one command run"""

    root: Path

    @abstractmethod
    def prepare(self, force: bool = False) -> None:
        """Create the directory; refuse an existing non-empty one unless force"""
        pass

    @abstractmethod
    def child(self, name: str) -> "ArtifactRepository":
        """Repository for a subdirectory (one per compared variant)"""
        pass

    @abstractmethod
    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """Write a CSV file with full-precision numbers"""
        pass

    @abstractmethod
    def write_json(self, name: str, payload: Any) -> Path:
        """Write a JSON document"""
        pass

    @abstractmethod
    def write_manifest(self, config: ExperimentConfig) -> Path:
        """Record the resolved config, seed and tool version"""
        pass

    @abstractmethod
    def write_trajectory(self, name: str, trajectory: Trajectory, with_states: bool = False) -> Path:
        """Dump per-step coefficients and log-prob terms of one trajectory"""
        pass

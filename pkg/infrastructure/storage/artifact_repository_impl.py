import csv
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import orjson

from core.config.settings import settings
from core.exceptions import OutputConflictError
from domain.entities.experiment import ExperimentConfig
from domain.entities.sampler import Trajectory
from domain.repositories.artifact_repository import ArtifactRepository

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ["t", "dt", "coeff_sample", "coeff_pred_noise", "coeff_fresh_noise", "norm_x", "logprob_term"]

_JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{settings.csv_digits}g}"
    return str(value)


def _default(obj: Any) -> Any:
    if hasattr(obj, "model_dump"):
        return obj.model_dump(mode="json")
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Cannot serialise {type(obj).__name__}")


def dumps_json(payload: Any) -> bytes:
    return orjson.dumps(payload, default=_default, option=_JSON_OPTIONS) + b"\n"


class FileArtifactRepository(ArtifactRepository):
    """Artifacts written as files under one directory"""

    def __init__(self, root: Path):
        self.root = Path(root)

    def prepare(self, force: bool = False) -> None:
        if self.root.exists():
            if not self.root.is_dir():
                raise OutputConflictError(f"Output path {self.root} exists and is not a directory")
            if any(self.root.iterdir()) and not force:
                raise OutputConflictError(
                    f"Output directory {self.root} is not empty; pass --force to write into it"
                )
        self.root.mkdir(parents=True, exist_ok=True)

    def child(self, name: str) -> "FileArtifactRepository":
        sub = FileArtifactRepository(self.root / name)
        sub.root.mkdir(parents=True, exist_ok=True)
        return sub

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.root / name
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_cell(v) for v in row])
        logger.info(f"Wrote {path}")
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.root / name
        path.write_bytes(dumps_json(payload))
        logger.info(f"Wrote {path}")
        return path

    def write_manifest(self, config: ExperimentConfig) -> Path:
        manifest = {
            "tool": settings.app_name,
            "version": settings.app_version,
            "command": config.command.value,
            "seed": config.seed,
            "config": config.model_dump(mode="json"),
        }
        return self.write_json(settings.manifest_filename, manifest)

    def write_trajectory(self, name: str, trajectory: Trajectory, with_states: bool = False) -> Path:
        rows = []
        for k, report in enumerate(trajectory.reports):
            x_next = trajectory.states[k + 1][1]
            logprob = trajectory.logprob_terms[k] if trajectory.logprob_terms else None
            if logprob is not None and np.ndim(logprob) > 0:
                logprob = float(np.mean(logprob))
            rows.append([
                report.t,
                report.dt,
                report.coeff_sample,
                report.coeff_pred_noise,
                report.coeff_fresh_noise,
                float(np.mean(np.linalg.norm(np.atleast_2d(x_next), axis=1))),
                logprob,
            ])
        path = self.write_csv(f"{name}.csv", TRAJECTORY_HEADER, rows)

        if with_states:
            states = np.stack([x for _, x in trajectory.states]).astype("<f8")
            if states.ndim != 2:
                raise ValueError("State dumps need single-point trajectories")
            header = f"states {states.shape[0]} {states.shape[1]}\n".encode("ascii")
            (self.root / f"{name}.states").write_bytes(header + states.tobytes())
        return path

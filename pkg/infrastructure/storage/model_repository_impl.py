import logging
import re
from pathlib import Path
from typing import Dict

import numpy as np

from domain.entities.velocity import Activation, MlpArchitecture, StoredModel
from domain.repositories.model_repository import ModelRepository

logger = logging.getLogger(__name__)

MAGIC = "flowcps-mlp"
FORMAT_VERSION = "v1"

_HEADER = re.compile(
    r"^flowcps-mlp v1 data_dim=(?P<data_dim>\d+) hidden=(?P<hidden>\d+(?:,\d+)*) "
    r"activation=(?P<activation>\w+) params=(?P<params>\d+)$"
)


def metadata_path(path: Path) -> Path:
    return Path(path).with_suffix(".meta")


class FileModelRepository(ModelRepository):
    """One ASCII header line followed by little-endian float64 parameters"""

    def save(self, model: StoredModel, path: Path, metadata: Dict[str, str]) -> Path:
        path = Path(path)
        arch = model.architecture
        params = np.asarray(model.params, dtype="<f8")
        if params.shape != (arch.param_count,):
            raise ValueError(f"Expected {arch.param_count} parameters, got {params.shape}")

        header = (
            f"{MAGIC} {FORMAT_VERSION} data_dim={arch.data_dim} "
            f"hidden={','.join(str(w) for w in arch.hidden)} "
            f"activation={arch.activation.value} params={arch.param_count}\n"
        )
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header.encode("ascii") + params.tobytes())

        lines = [f"{key}={metadata[key]}" for key in sorted(metadata)]
        metadata_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info(f"Saved model ({arch.param_count} params) to {path}")
        return path

    def load(self, path: Path) -> StoredModel:
        path = Path(path)
        raw = path.read_bytes()
        newline = raw.find(b"\n")
        if newline < 0:
            raise ValueError(f"{path}: missing model header")
        match = _HEADER.match(raw[:newline].decode("ascii", errors="replace"))
        if match is None:
            raise ValueError(f"{path}: not a {MAGIC} {FORMAT_VERSION} model file")

        architecture = MlpArchitecture(
            data_dim=int(match["data_dim"]),
            hidden=[int(w) for w in match["hidden"].split(",")],
            activation=Activation(match["activation"]),
        )
        count = int(match["params"])
        body = raw[newline + 1:]
        if count != architecture.param_count or len(body) != 8 * count:
            raise ValueError(
                f"{path}: header declares {count} params, architecture needs {architecture.param_count}, "
                f"file holds {len(body) // 8}"
            )
        params = np.frombuffer(body, dtype="<f8").astype(np.float64)
        return StoredModel(architecture=architecture, params=params)

    def load_metadata(self, path: Path) -> Dict[str, str]:
        metadata: Dict[str, str] = {}
        for line in metadata_path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"Malformed metadata line: {line!r}")
            metadata[key.strip()] = value.strip()
        return metadata

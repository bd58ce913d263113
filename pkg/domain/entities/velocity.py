from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"


class MlpArchitecture(BaseModel):
    """Fully connected net mapping (x, t) in R^(D+1) to a velocity in R^D"""
    data_dim: int = Field(default=2, ge=1)
    hidden: List[int] = [64, 64]
    activation: Activation = Activation.TANH

    model_config = ConfigDict(frozen=True)

    @field_validator("hidden")
    @classmethod
    def _check_hidden(cls, hidden: List[int]) -> List[int]:
        if not hidden:
            raise ValueError("At least one hidden layer is required")
        if any(width < 1 for width in hidden):
            raise ValueError(f"Hidden widths must be >= 1, got {hidden}")
        return hidden

    @property
    def input_dim(self) -> int:
        return self.data_dim + 1

    @property
    def output_dim(self) -> int:
        return self.data_dim

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden, self.output_dim]

    @property
    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


class DataKind(str, Enum):
    DELTA = "delta"
    GAUSSIAN = "gaussian"
    MIXTURE = "mixture"


class DataSpec(BaseModel):
    """Distribution of x0 (the data end of the interpolation)"""
    kind: DataKind
    center: Optional[List[float]] = None          # delta
    scale: float = Field(default=1.0, gt=0.0)     # gaussian: x0 ~ N(0, scale^2 I)
    centers: Optional[List[List[float]]] = None   # mixture, equal weights
    std: float = Field(default=0.3, gt=0.0)       # mixture component std

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "DataSpec":
        if self.kind == DataKind.DELTA and not self.center:
            raise ValueError("delta data requires a center")
        if self.kind == DataKind.MIXTURE:
            if not self.centers:
                raise ValueError("mixture data requires at least one center")
            dims = {len(c) for c in self.centers}
            if len(dims) != 1:
                raise ValueError("mixture centers must share one dimension")
        return self

    def dimension(self, default: int = 2) -> int:
        if self.kind == DataKind.DELTA:
            return len(self.center)
        if self.kind == DataKind.MIXTURE:
            return len(self.centers[0])
        return default


@dataclass(frozen=True)
class StoredModel:
    """Architecture and flat parameter vector of a persisted MLP"""
    architecture: MlpArchitecture
    params: np.ndarray

from enum import Enum
from typing import Iterator, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class SigmaKind(str, Enum):
    FLOW_GRPO = "flow_grpo"      # sigma = eta * sqrt(t / (1 - t))
    DANCE_GRPO = "dance_grpo"    # sigma = eta
    CPS_ETA = "cps_eta"          # sigma = (t - dt) * sin(eta * pi / 2)
    PATCHED_ETA = "patched_eta"  # sigma = eta * (t - dt)


class TimeGrid(BaseModel):
    """Discrete noise levels 1 = t_K > ... > t_0 = 0, stored from t_K down to t_0"""
    steps: List[float]

    model_config = ConfigDict(frozen=True)

    @field_validator("steps")
    @classmethod
    def _check_steps(cls, steps: List[float]) -> List[float]:
        if len(steps) < 2:
            raise ValueError("A time grid needs at least two timesteps")
        if steps[0] != 1.0 or steps[-1] != 0.0:
            raise ValueError(f"Time grid must start at 1 and end at 0, got {steps[0]!r}..{steps[-1]!r}")
        for k in range(1, len(steps)):
            if not steps[k] < steps[k - 1]:
                raise ValueError(f"Time grid must be strictly decreasing (index {k})")
        return steps

    @property
    def K(self) -> int:
        return len(self.steps) - 1

    def transitions(self) -> Iterator[Tuple[float, float]]:
        """Yield (t, dt) per step, with dt = t_k - t_{k-1}"""
        for k in range(self.K):
            t = self.steps[k]
            yield t, t - self.steps[k + 1]

    def deltas(self) -> List[float]:
        return [dt for _, dt in self.transitions()]


class SigmaRule(BaseModel):
    kind: SigmaKind
    eta: float = Field(default=0.0, ge=0.0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_eta(self) -> "SigmaRule":
        if self.kind == SigmaKind.CPS_ETA and self.eta > 1.0:
            raise ValueError(f"cps_eta requires eta in [0, 1], got {self.eta!r}")
        return self

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from domain.entities.sampler import SamplerKind, Trajectory


class RewardKind(str, Enum):
    NEG_DISTANCE = "neg_distance"      # -||x - target||
    MODE_INDICATOR = "mode_indicator"  # 1 inside the radius around target, else 0


class RewardSpec(BaseModel):
    """Verifiable reward on terminal samples"""
    kind: RewardKind
    target: List[float]
    radius: Optional[float] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_radius(self) -> "RewardSpec":
        if self.kind == RewardKind.MODE_INDICATOR and (self.radius is None or self.radius <= 0.0):
            raise ValueError("mode_indicator reward needs a positive radius")
        return self


class GrpoConfig(BaseModel):
    group_size: int = Field(default=8, ge=2)
    clip_eps: float = Field(default=0.2, gt=0.0, lt=1.0)
    sampler: SamplerKind
    kl_beta: float = Field(default=0.0, ge=0.0)
    lr: float = Field(default=0.05, gt=0.0)
    groups_per_iter: int = Field(default=4, ge=1)
    iters: int = Field(default=200, ge=0)
    seed: int = Field(default=0, ge=0)
    max_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    eval_batch: int = Field(default=64, ge=1)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_sampler(self) -> "GrpoConfig":
        if not self.sampler.is_stochastic:
            raise ValueError(f"GRPO needs a stochastic sampler, got {self.sampler.label}")
        return self

    @property
    def G(self) -> int:
        return self.group_size

    @property
    def eta(self) -> float:
        return self.sampler.eta


@dataclass(frozen=True)
class GroupRollout:
    """G trajectories from one shared prompt seed, with their rewards and advantages"""
    prompt_seed: int
    members: List[Trajectory]
    rewards: np.ndarray
    advantages: np.ndarray


class IterationStats(BaseModel):
    """One row of the per-iteration reward log"""
    iter: int
    mean_train_reward: float
    mean_eval_reward: float
    clip_frac: float
    mean_ratio: float
    grad_norm: float
    objective: float = 0.0
    kl: float = 0.0
    eval_reward_std: float = 0.0

    def is_finite(self) -> bool:
        return all(
            math.isfinite(v)
            for v in (self.mean_train_reward, self.mean_eval_reward, self.mean_ratio, self.grad_norm, self.objective)
        )

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from domain.entities.grpo import GrpoConfig, RewardSpec
from domain.entities.sampler import SamplerFamily, SamplerKind
from domain.entities.schedule import TimeGrid
from domain.entities.velocity import DataSpec, MlpArchitecture


class ExperimentCommand(str, Enum):
    AUDIT = "audit"
    PRETRAIN = "pretrain"
    GRPO = "grpo"
    COMPARE = "compare"


class VelocityKind(str, Enum):
    MLP = "mlp"
    DELTA = "delta"
    GAUSSIAN = "gaussian"


class VelocitySection(BaseModel):
    kind: VelocityKind = VelocityKind.MLP
    center: Optional[List[float]] = None  # delta oracle
    scale: float = Field(default=1.0, gt=0.0)  # gaussian oracle
    model: Optional[str] = None  # pretrained MLP file
    data: Optional[DataSpec] = None  # pretraining data
    architecture: MlpArchitecture = MlpArchitecture()
    steps: int = Field(default=4000, ge=1)
    lr: float = Field(default=0.01, gt=0.0)
    final_lr: Optional[float] = Field(default=None, gt=0.0)  # cosine decay target; None keeps lr constant
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    batch_size: int = Field(default=256, ge=1)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_kind(self) -> "VelocitySection":
        if self.kind == VelocityKind.DELTA and not self.center:
            raise ValueError("delta velocity requires a center")
        if self.final_lr is not None and self.final_lr > self.lr:
            raise ValueError(f"final_lr {self.final_lr!r} must not exceed lr {self.lr!r}")
        if self.data is not None and self.data.dimension(self.architecture.data_dim) != self.architecture.data_dim:
            raise ValueError(
                f"data dimension {self.data.dimension()} does not match architecture data_dim "
                f"{self.architecture.data_dim}"
            )
        return self

    @property
    def data_dim(self) -> int:
        if self.kind == VelocityKind.DELTA:
            return len(self.center)
        return self.architecture.data_dim


class GrpoSection(BaseModel):
    group_size: int = Field(default=8, ge=2)
    clip_eps: float = Field(default=0.2, gt=0.0, lt=1.0)
    kl_beta: float = Field(default=0.0, ge=0.0)
    lr: float = Field(default=0.05, gt=0.0)
    groups_per_iter: int = Field(default=4, ge=1)
    iters: int = Field(default=200, ge=0)
    max_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    eval_batch: int = Field(default=64, ge=1)

    model_config = ConfigDict(frozen=True)

    def for_sampler(self, sampler: SamplerKind, seed: int) -> GrpoConfig:
        return GrpoConfig(sampler=sampler, seed=seed, **self.model_dump())


class AuditSection(BaseModel):
    terminal_rollouts: int = Field(default=0, ge=0)
    monte_carlo_draws: int = Field(default=0, ge=0)
    vp_beta: Optional[float] = Field(default=None, gt=0.0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_counts(self) -> "AuditSection":
        if 0 < self.terminal_rollouts < 1000:
            raise ValueError(f"terminal_rollouts must be 0 or >= 1000, got {self.terminal_rollouts}")
        if self.monte_carlo_draws == 1:
            raise ValueError("monte_carlo_draws must be 0 or >= 2")
        return self


class ExperimentConfig(BaseModel):
    """Fully resolved experiment; this is what the manifest records"""
    command: ExperimentCommand
    output_dir: str
    seed: int = Field(ge=0)
    grids: List[TimeGrid]
    samplers: List[SamplerKind] = []
    velocity: VelocitySection = VelocitySection()
    grpo: Optional[GrpoSection] = None
    reward: Optional[RewardSpec] = None
    audit: AuditSection = AuditSection()

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_command(self) -> "ExperimentConfig":
        if not self.grids and self.command != ExperimentCommand.PRETRAIN:
            raise ValueError("at least one time grid is required")
        if any(s.family == SamplerFamily.DDIM_REF for s in self.samplers):
            raise ValueError("ddim_ref cannot be used as a rollout sampler")
        labels = [s.label for s in self.samplers]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate samplers in {labels}")

        if self.command == ExperimentCommand.AUDIT:
            if not self.samplers:
                raise ValueError("audit needs a non-empty sampler list")
            if self.audit.terminal_rollouts and self.velocity.kind != VelocityKind.DELTA:
                raise ValueError("terminal_rollouts needs the delta velocity")

        if self.command == ExperimentCommand.PRETRAIN:
            if self.velocity.kind != VelocityKind.MLP or self.velocity.data is None:
                raise ValueError("pretrain needs an mlp velocity with a data distribution")

        if self.command in (ExperimentCommand.GRPO, ExperimentCommand.COMPARE):
            if not self.samplers:
                raise ValueError(f"{self.command.value} needs at least one sampler")
            if self.grpo is None or self.reward is None:
                raise ValueError(f"{self.command.value} needs [grpo] and [reward] sections")
            if self.velocity.kind != VelocityKind.MLP:
                raise ValueError("GRPO fine-tunes an mlp velocity")
            if self.velocity.model is None and self.velocity.data is None:
                raise ValueError("GRPO needs a pretrained model or a data distribution to pretrain on")
            if len(self.reward.target) != self.velocity.data_dim:
                raise ValueError("reward target dimension does not match the velocity data_dim")
            for sampler in self.samplers:
                if not sampler.is_stochastic:
                    raise ValueError(f"GRPO needs stochastic samplers, got {sampler.label}")
        return self

    @property
    def grid(self) -> TimeGrid:
        if not self.grids:
            raise ValueError("no time grid configured")
        return self.grids[0]

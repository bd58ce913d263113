from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from domain.entities.schedule import SigmaKind, SigmaRule


class SamplerFamily(str, Enum):
    ODE = "ode"
    FLOW_SDE = "flow_sde"
    CPS = "cps"
    CPWS = "cpws"
    PATCHED_SDE = "patched_sde"
    DDIM_REF = "ddim_ref"


STOCHASTIC_FAMILIES = {
    SamplerFamily.FLOW_SDE,
    SamplerFamily.CPS,
    SamplerFamily.CPWS,
    SamplerFamily.PATCHED_SDE,
}

FLOW_SDE_RULES = {SigmaKind.FLOW_GRPO, SigmaKind.DANCE_GRPO}


class SamplerKind(BaseModel):
    """Which step rule a rollout uses, with its stochastic strength"""
    family: SamplerFamily
    eta: float = Field(default=0.0, ge=0.0)
    sigma_kind: Optional[SigmaKind] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_family(self) -> "SamplerKind":
        if self.family == SamplerFamily.ODE and (self.eta != 0.0 or self.sigma_kind is not None):
            raise ValueError("The ODE sampler takes no eta or sigma rule")
        if self.family == SamplerFamily.FLOW_SDE and self.sigma_kind not in FLOW_SDE_RULES:
            raise ValueError(f"flow_sde needs a flow_grpo or dance_grpo sigma rule, got {self.sigma_kind!r}")
        if self.family == SamplerFamily.CPS and self.eta > 1.0:
            raise ValueError(f"cps requires eta in [0, 1], got {self.eta!r}")
        if self.family == SamplerFamily.CPWS and self.sigma_kind is None:
            raise ValueError("cpws needs a sigma rule")
        if self.sigma_kind is not None:
            # surfaces rule-level constraints (cps_eta eta range) at construction
            SigmaRule(kind=self.sigma_kind, eta=self.eta)
        return self

    @classmethod
    def ode(cls) -> "SamplerKind":
        return cls(family=SamplerFamily.ODE)

    @classmethod
    def flow_sde(cls, sigma_kind: SigmaKind, eta: float) -> "SamplerKind":
        return cls(family=SamplerFamily.FLOW_SDE, sigma_kind=sigma_kind, eta=eta)

    @classmethod
    def cps(cls, eta: float) -> "SamplerKind":
        return cls(family=SamplerFamily.CPS, eta=eta)

    @classmethod
    def cpws(cls, sigma_kind: SigmaKind, eta: float) -> "SamplerKind":
        return cls(family=SamplerFamily.CPWS, sigma_kind=sigma_kind, eta=eta)

    @classmethod
    def patched(cls, eta: float) -> "SamplerKind":
        return cls(family=SamplerFamily.PATCHED_SDE, eta=eta)

    @property
    def sigma_rule(self) -> Optional[SigmaRule]:
        if self.sigma_kind is None:
            return None
        return SigmaRule(kind=self.sigma_kind, eta=self.eta)

    @property
    def is_stochastic(self) -> bool:
        return self.family in STOCHASTIC_FAMILIES

    @property
    def label(self) -> str:
        """Filesystem-safe name, e.g. flow_sde-dance_grpo-0.3"""
        parts = [self.family.value]
        if self.sigma_kind is not None:
            parts.append(self.sigma_kind.value)
        if self.family != SamplerFamily.ODE:
            parts.append(f"{self.eta:g}")
        return "-".join(parts)

    def with_eta(self, eta: float) -> "SamplerKind":
        if self.family == SamplerFamily.ODE:
            return self
        return self.model_copy(update={"eta": eta})


@dataclass(frozen=True)
class SamplerStepReport:
    """
    Auditable record of one transition:
    x_next = coeff_sample * x0_hat + coeff_pred_noise * x1_hat + coeff_fresh_noise * eps
    """
    t: float
    dt: float
    coeff_sample: float
    coeff_pred_noise: float
    coeff_fresh_noise: float
    mu: np.ndarray   # deterministic mean, everything but the eps term
    eps: np.ndarray  # injected standard normal draw (zeros for the ODE)

    @property
    def t_next(self) -> float:
        return self.t - self.dt


LogProb = Union[float, np.ndarray]


@dataclass(frozen=True)
class Trajectory:
    """
    States from t = 1 down to t = 0 with one report per transition.

    States may be single points (D,) or batches (N, D); log-prob terms follow
    (float or (N,) array). logprob_terms is empty for deterministic samplers.
    """
    states: List[Tuple[float, np.ndarray]]
    reports: List[SamplerStepReport]
    logprob_terms: List[LogProb]

    def __post_init__(self):
        if len(self.states) != len(self.reports) + 1:
            raise ValueError(
                f"Trajectory needs len(states) == len(reports) + 1, got {len(self.states)} and {len(self.reports)}"
            )
        if self.states[0][0] != 1.0:
            raise ValueError(f"Trajectory must start at t=1, got {self.states[0][0]!r}")
        if self.logprob_terms and len(self.logprob_terms) != len(self.reports):
            raise ValueError("One log-prob term per step is required when log-probs are recorded")

    @property
    def K(self) -> int:
        return len(self.reports)

    @property
    def initial(self) -> np.ndarray:
        return self.states[0][1]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1][1]

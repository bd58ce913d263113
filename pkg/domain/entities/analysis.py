import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from domain.entities.sampler import SamplerKind


class CurveFlag(str, Enum):
    OK = "ok"
    NEGATIVE_PRED_NOISE = "negative_pred_noise"  # the square in the total noise level hides the sign
    RADICAND_GAP = "radicand_gap"                # step rule undefined here; no actual value


class NoiseCurvePoint(BaseModel):
    t_next: float
    ideal: float
    actual: Optional[float]
    flag: CurveFlag = CurveFlag.OK

    model_config = ConfigDict(frozen=True)

    @property
    def error(self) -> Optional[float]:
        if self.actual is None:
            return None
        return self.actual - self.ideal


class NoiseCurve(BaseModel):
    """Ideal (scheduler) vs actual total noise level after every step of one grid"""
    sampler: SamplerKind
    K: int = Field(ge=1)
    points: List[NoiseCurvePoint]

    @model_validator(mode="after")
    def _check_points(self) -> "NoiseCurve":
        for p in self.points:
            if p.ideal != p.t_next:
                raise ValueError(f"ideal level must equal t_next, got {p.ideal!r} vs {p.t_next!r}")
            if p.actual is not None and p.actual < 0.0:
                raise ValueError(f"actual noise level must be non-negative, got {p.actual!r}")
        return self

    def max_error(self) -> Tuple[Optional[float], Optional[float]]:
        """(largest actual - ideal, t_next where it occurs), ignoring gaps"""
        best: Tuple[Optional[float], Optional[float]] = (None, None)
        for p in self.points:
            err = p.error
            if err is not None and (best[0] is None or err > best[0]):
                best = (err, p.t_next)
        return best

    def error_at(self, t_next: float, tol: float = 1e-12) -> Optional[float]:
        for p in self.points:
            if abs(p.t_next - t_next) <= tol:
                return p.error
        return None

    def flag_counts(self) -> Dict[str, int]:
        counts = {flag.value: 0 for flag in CurveFlag}
        for p in self.points:
            counts[p.flag.value] += 1
        return counts


class ErrorBudget(BaseModel):
    """Noise-level error of Flow-SDE relative to Flow-CPWS for one step"""
    t: float
    dt: float
    sigma: float
    predicted_error: float

    model_config = ConfigDict(frozen=True)


class TaylorGap(BaseModel):
    """Predicted-noise coefficient gaps between Flow-CPWS and its first-order approximations"""
    t: float
    dt: float
    sigma: float
    cpws: float
    intermediate: float  # denominator 2(t - dt)
    flow_sde: float      # denominator 2t

    model_config = ConfigDict(frozen=True)

    @property
    def gap_to_flow_sde(self) -> float:
        return abs(self.cpws - self.flow_sde)

    @property
    def gap_to_intermediate(self) -> float:
        return abs(self.cpws - self.intermediate)


class MonteCarloNoiseEstimate(BaseModel):
    """Empirical per-coordinate std of a step's noise terms against the analytic level"""
    draws: int
    expected: float
    std: List[float]
    standard_error: List[float]

    def z_scores(self) -> List[float]:
        return [
            (s - self.expected) / se if se > 0.0 else (0.0 if s == self.expected else math.inf)
            for s, se in zip(self.std, self.standard_error)
        ]

    def within(self, k: float = 3.0) -> bool:
        return all(abs(z) <= k for z in self.z_scores())

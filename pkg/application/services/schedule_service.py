import math
import logging

from core.config.settings import settings
from core.exceptions import ScheduleDomainError, SingularityError
from domain.entities.schedule import SigmaKind, SigmaRule, TimeGrid

logger = logging.getLogger(__name__)


def uniform_grid(K: int) -> TimeGrid:
    """Uniform grid t_k = k/K for k = K..0"""
    if isinstance(K, bool) or not isinstance(K, int) or K < 1:
        raise ScheduleDomainError(f"Step count must be a positive integer, got {K!r}")
    steps = [k / K for k in range(K, -1, -1)]
    return TimeGrid(steps=steps)


def _check_step(t: float, dt: float) -> None:
    if not (0.0 < t <= 1.0):
        raise ScheduleDomainError(f"t must lie in (0, 1], got {t!r}")
    if not (0.0 < dt <= t):
        raise ScheduleDomainError(f"dt must lie in (0, t], got dt={dt!r} for t={t!r}")


def _flow_grpo_sigma(eta: float, t: float) -> float:
    if t >= 1.0:
        raise SingularityError("Flow-GRPO sigma is singular at t=1; clamp t before evaluating")
    return eta * math.sqrt(t / (1.0 - t))


def sigma_at(rule: SigmaRule, t: float, dt: float) -> float:
    """
    Noise magnitude sigma_t for one step starting at t.

    Raises:
        ScheduleDomainError: t or dt outside 0 < dt <= t <= 1, or cps_eta with eta outside [0, 1]
        SingularityError: Flow-GRPO rule evaluated at t = 1
    """
    _check_step(t, dt)

    if rule.kind == SigmaKind.FLOW_GRPO:
        return _flow_grpo_sigma(rule.eta, t)
    if rule.kind == SigmaKind.DANCE_GRPO:
        return rule.eta
    if rule.kind == SigmaKind.CPS_ETA:
        if not (0.0 <= rule.eta <= 1.0):
            raise ScheduleDomainError(f"cps_eta requires eta in [0, 1], got {rule.eta!r}")
        return (t - dt) * math.sin(rule.eta * math.pi / 2.0)
    if rule.kind == SigmaKind.PATCHED_ETA:
        return rule.eta * (t - dt)
    raise ScheduleDomainError(f"Unknown sigma rule: {rule.kind!r}")


def sigma_for_step(rule: SigmaRule, t: float, dt: float) -> float:
    """
    sigma_at with the Flow-GRPO clamp t' = min(t, 1 - clamp) applied.

    This is what the samplers and the audits evaluate; sigma_at itself stays strict.
    """
    if rule.kind == SigmaKind.FLOW_GRPO:
        _check_step(t, dt)
        return _flow_grpo_sigma(rule.eta, min(t, 1.0 - settings.flow_grpo_time_clamp))
    return sigma_at(rule, t, dt)

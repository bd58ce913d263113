"""
Closed-form step coefficients for every sampler family.

Each rule returns (coeff_sample, coeff_pred_noise, coeff_fresh_noise) in the
form x_next = a * x0_hat + b * x1_hat + c * eps, with s = t - dt the scheduler's
target noise level. No sampling happens here; the step functions and the
noise-level audits both read these.
"""

import math
import logging
from typing import NamedTuple

from application.services.schedule_service import sigma_for_step
from core.exceptions import ConfigurationError, RadicandError, ScheduleDomainError
from domain.entities.sampler import FLOW_SDE_RULES, SamplerFamily, SamplerKind
from domain.entities.schedule import SigmaRule

logger = logging.getLogger(__name__)


class StepCoefficients(NamedTuple):
    sample: float
    pred_noise: float
    fresh_noise: float


def check_step(t: float, dt: float) -> None:
    if not (0.0 < dt <= t <= 1.0):
        raise ScheduleDomainError(f"Step needs 0 < dt <= t <= 1, got t={t!r}, dt={dt!r}")


def ode_coefficients(t: float, dt: float) -> StepCoefficients:
    check_step(t, dt)
    s = t - dt
    return StepCoefficients(1.0 - s, s, 0.0)


def flow_sde_coefficients(t: float, dt: float, rule: SigmaRule) -> StepCoefficients:
    """Flow-SDE in coefficient form; the predicted-noise coefficient may go negative"""
    check_step(t, dt)
    if rule.kind not in FLOW_SDE_RULES:
        raise ScheduleDomainError(f"flow_sde needs a flow_grpo or dance_grpo sigma rule, got {rule.kind.value}")
    s = t - dt
    sigma = sigma_for_step(rule, t, dt)
    return StepCoefficients(1.0 - s, s - sigma * sigma * dt / (2.0 * t), sigma * math.sqrt(dt))


def cps_coefficients(t: float, dt: float, eta: float) -> StepCoefficients:
    check_step(t, dt)
    if not (0.0 <= eta <= 1.0):
        raise ScheduleDomainError(f"cps requires eta in [0, 1], got {eta!r}")
    s = t - dt
    angle = eta * math.pi / 2.0
    return StepCoefficients(1.0 - s, s * math.cos(angle), s * math.sin(angle))


def cps_sigma_coefficients(t: float, dt: float, sigma: float) -> StepCoefficients:
    check_step(t, dt)
    s = t - dt
    if sigma < 0.0:
        raise ScheduleDomainError(f"sigma must be non-negative, got {sigma!r}")
    if sigma > s:
        raise RadicandError(t, dt, sigma, f"sigma={sigma!r} exceeds t - dt={s!r}: negative radicand")
    return StepCoefficients(1.0 - s, math.sqrt(s * s - sigma * sigma), sigma)


def cpws_coefficients(t: float, dt: float, rule: SigmaRule) -> StepCoefficients:
    check_step(t, dt)
    s = t - dt
    sigma = sigma_for_step(rule, t, dt)
    radicand = s * s - sigma * sigma * dt
    if radicand < 0.0:
        raise RadicandError(t, dt, sigma)
    return StepCoefficients(1.0 - s, math.sqrt(radicand), sigma * math.sqrt(dt))


def patched_sde_coefficients(t: float, dt: float, eta: float, exact: bool = True) -> StepCoefficients:
    """
    Flow-SDE with sigma_t = eta * (t - dt).

    exact=True keeps (t - dt) in every coefficient; exact=False is the
    t-substituted approximation of the same step.
    """
    check_step(t, dt)
    s = t - dt
    level = s if exact else t
    return StepCoefficients(1.0 - s, s - 0.5 * eta * eta * level * dt, eta * level * math.sqrt(dt))


def ddim_coefficients(alpha_prev: float, sigma: float) -> StepCoefficients:
    if not (0.0 < alpha_prev <= 1.0):
        raise ScheduleDomainError(f"alpha_prev must lie in (0, 1], got {alpha_prev!r}")
    radicand = 1.0 - alpha_prev - sigma * sigma
    if radicand < 0.0:
        raise RadicandError(float("nan"), float("nan"), sigma, f"sigma^2={sigma * sigma!r} exceeds 1 - alpha_prev")
    return StepCoefficients(math.sqrt(alpha_prev), math.sqrt(radicand), sigma)


def ddpm_sigma(alpha_t: float, alpha_prev: float) -> float:
    """The sigma that turns the DDIM step into DDPM ancestral sampling"""
    if not (0.0 < alpha_t < alpha_prev <= 1.0):
        raise ScheduleDomainError(f"Need 0 < alpha_t < alpha_prev <= 1, got {alpha_t!r}, {alpha_prev!r}")
    return math.sqrt((1.0 - alpha_prev) / (1.0 - alpha_t)) * math.sqrt(1.0 - alpha_t / alpha_prev)


def kind_coefficients(kind: SamplerKind, t: float, dt: float) -> StepCoefficients:
    if kind.family == SamplerFamily.ODE:
        return ode_coefficients(t, dt)
    if kind.family == SamplerFamily.FLOW_SDE:
        return flow_sde_coefficients(t, dt, kind.sigma_rule)
    if kind.family == SamplerFamily.CPS:
        return cps_coefficients(t, dt, kind.eta)
    if kind.family == SamplerFamily.CPWS:
        return cpws_coefficients(t, dt, kind.sigma_rule)
    if kind.family == SamplerFamily.PATCHED_SDE:
        return patched_sde_coefficients(t, dt, kind.eta)
    raise ConfigurationError(
        f"{kind.family.value} is a reference step rule and has no flow-matching coefficients"
    )

"""
Pure transition functions. Each returns the next state and the report of the
coefficients it applied; eps is always supplied by the caller.
"""

import math
from typing import Tuple

import numpy as np

from application.services.sampling.coefficients import (
    StepCoefficients,
    cps_coefficients,
    cps_sigma_coefficients,
    cpws_coefficients,
    ddim_coefficients,
    flow_sde_coefficients,
    kind_coefficients,
    ode_coefficients,
    patched_sde_coefficients,
)
from application.services.velocity.base import VelocityField, eval_velocity
from core.exceptions import ScheduleDomainError
from domain.entities.sampler import SamplerKind, SamplerStepReport
from domain.entities.schedule import SigmaRule

StepResult = Tuple[np.ndarray, SamplerStepReport]


def predict_endpoints(x: np.ndarray, t: float, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(x0_hat, x1_hat) = (x - t v, x + (1 - t) v)"""
    if not (0.0 <= t <= 1.0):
        raise ScheduleDomainError(f"t must lie in [0, 1], got {t!r}")
    return x - t * v, x + (1.0 - t) * v


def compose_mean(x: np.ndarray, v: np.ndarray, t: float, coeffs: StepCoefficients) -> np.ndarray:
    x0_hat, x1_hat = predict_endpoints(x, t, v)
    return coeffs.sample * x0_hat + coeffs.pred_noise * x1_hat


def _apply(
    field: VelocityField, x: np.ndarray, t: float, dt: float, coeffs: StepCoefficients, eps: np.ndarray
) -> StepResult:
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x.shape:
        raise ValueError(f"eps shape {eps.shape} does not match state shape {x.shape}")
    mu = compose_mean(x, eval_velocity(field, x, t), t, coeffs)
    x_next = mu + coeffs.fresh_noise * eps
    report = SamplerStepReport(
        t=t,
        dt=dt,
        coeff_sample=coeffs.sample,
        coeff_pred_noise=coeffs.pred_noise,
        coeff_fresh_noise=coeffs.fresh_noise,
        mu=mu,
        eps=eps,
    )
    return x_next, report


def ode_step(field: VelocityField, x: np.ndarray, t: float, dt: float) -> StepResult:
    return _apply(field, x, t, dt, ode_coefficients(t, dt), np.zeros_like(np.asarray(x, dtype=np.float64)))


def flow_sde_step(
    field: VelocityField, x: np.ndarray, t: float, dt: float, rule: SigmaRule, eps: np.ndarray
) -> StepResult:
    return _apply(field, x, t, dt, flow_sde_coefficients(t, dt, rule), eps)


def cps_step(field: VelocityField, x: np.ndarray, t: float, dt: float, eta: float, eps: np.ndarray) -> StepResult:
    return _apply(field, x, t, dt, cps_coefficients(t, dt, eta), eps)


def cps_sigma_step(
    field: VelocityField, x: np.ndarray, t: float, dt: float, sigma: float, eps: np.ndarray
) -> StepResult:
    return _apply(field, x, t, dt, cps_sigma_coefficients(t, dt, sigma), eps)


def cpws_step(
    field: VelocityField, x: np.ndarray, t: float, dt: float, rule: SigmaRule, eps: np.ndarray
) -> StepResult:
    return _apply(field, x, t, dt, cpws_coefficients(t, dt, rule), eps)


def patched_sde_step(
    field: VelocityField, x: np.ndarray, t: float, dt: float, eta: float, eps: np.ndarray
) -> StepResult:
    return _apply(field, x, t, dt, patched_sde_coefficients(t, dt, eta), eps)


def ddim_ref_step(
    eps_pred: np.ndarray,
    x: np.ndarray,
    alpha_t: float,
    alpha_prev: float,
    sigma: float,
    eps: np.ndarray,
) -> StepResult:
    """
    DDIM step with stochasticity on cumulative alphas.

    The report's t and dt carry the VP noise levels sqrt(1 - alpha_t) and
    sqrt(1 - alpha_t) - sqrt(1 - alpha_prev).
    """
    if not (0.0 < alpha_t <= 1.0):
        raise ScheduleDomainError(f"alpha_t must lie in (0, 1], got {alpha_t!r}")
    coeffs = ddim_coefficients(alpha_prev, sigma)
    x = np.asarray(x, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)

    x0_pred = (x - math.sqrt(1.0 - alpha_t) * eps_pred) / math.sqrt(alpha_t)
    mu = coeffs.sample * x0_pred + coeffs.pred_noise * eps_pred
    x_next = mu + coeffs.fresh_noise * eps
    level, level_prev = math.sqrt(1.0 - alpha_t), math.sqrt(1.0 - alpha_prev)
    report = SamplerStepReport(
        t=level,
        dt=level - level_prev,
        coeff_sample=coeffs.sample,
        coeff_pred_noise=coeffs.pred_noise,
        coeff_fresh_noise=coeffs.fresh_noise,
        mu=mu,
        eps=eps,
    )
    return x_next, report


def kind_step(
    kind: SamplerKind, field: VelocityField, x: np.ndarray, t: float, dt: float, eps: np.ndarray
) -> StepResult:
    """Dispatch one step of a flow-matching sampler family"""
    return _apply(field, x, t, dt, kind_coefficients(kind, t, dt), eps)

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from application.services.sampling.coefficients import (
    cpws_coefficients,
    flow_sde_coefficients,
    kind_coefficients,
)
from application.services.sampling.rollout import rollout, validate_kind_on_grid
from application.services.seeding import STREAM_MONTE_CARLO, make_rng
from application.services.velocity.base import VelocityField
from application.services.velocity.oracles import DeltaOracle
from core.config.settings import settings
from core.exceptions import (
    ConfigurationError,
    RadicandError,
    ScheduleDomainError,
    UnsupportedVelocityError,
)
from domain.entities.analysis import (
    CurveFlag,
    ErrorBudget,
    MonteCarloNoiseEstimate,
    NoiseCurve,
    NoiseCurvePoint,
    TaylorGap,
)
from domain.entities.sampler import SamplerFamily, SamplerKind
from domain.entities.schedule import SigmaKind, SigmaRule, TimeGrid

logger = logging.getLogger(__name__)


def total_noise_level(coeff_pred_noise: float, coeff_fresh_noise: float) -> float:
    """Root-sum-square of the predicted-noise and fresh-noise coefficients"""
    return math.hypot(coeff_pred_noise, coeff_fresh_noise)


def flow_sde_total_noise_closed_form(t: float, dt: float, sigma: float) -> float:
    """sqrt((t - dt)^2 + (sigma dt)^2 / t + (sigma^2 dt / 2t)^2)"""
    s = t - dt
    return math.sqrt(s * s + (sigma * dt) ** 2 / t + (sigma * sigma * dt / (2.0 * t)) ** 2)


def noise_curve(kind: SamplerKind, grid: TimeGrid) -> NoiseCurve:
    """Analytic ideal vs actual noise level per step; radicand violations become gaps"""
    if kind.family == SamplerFamily.DDIM_REF:
        raise ConfigurationError("ddim_ref has no flow-matching noise curve")

    points: List[NoiseCurvePoint] = []
    for k, (t, dt) in enumerate(grid.transitions()):
        t_next = grid.steps[k + 1]
        try:
            coeffs = kind_coefficients(kind, t, dt)
        except RadicandError as e:
            logger.warning(f"{kind.label} K={grid.K}: radicand gap at t={t}: {e}")
            points.append(NoiseCurvePoint(t_next=t_next, ideal=t_next, actual=None, flag=CurveFlag.RADICAND_GAP))
            continue
        flag = CurveFlag.NEGATIVE_PRED_NOISE if coeffs.pred_noise < 0.0 else CurveFlag.OK
        points.append(
            NoiseCurvePoint(
                t_next=t_next,
                ideal=t_next,
                actual=total_noise_level(coeffs.pred_noise, coeffs.fresh_noise),
                flag=flag,
            )
        )

    curve = NoiseCurve(sampler=kind, K=grid.K, points=points)
    negatives = curve.flag_counts()[CurveFlag.NEGATIVE_PRED_NOISE.value]
    if negatives:
        logger.warning(f"{kind.label} K={grid.K}: {negatives} step(s) with negative predicted-noise coefficient")
    return curve


def theorem1_error(t: float, dt: float, sigma: float) -> ErrorBudget:
    """Noise-level error of the first-order (Flow-SDE) approximation of Flow-CPWS"""
    if t <= 0.0 or dt <= 0.0:
        raise ScheduleDomainError(f"theorem1_error needs t > 0 and dt > 0, got t={t!r}, dt={dt!r}")
    predicted = math.sqrt((sigma * dt) ** 2 / t + (sigma * sigma * dt / (2.0 * t)) ** 2)
    return ErrorBudget(t=t, dt=dt, sigma=sigma, predicted_error=predicted)


def taylor_gap(t: float, dt: float, sigma: float) -> TaylorGap:
    """
    Compare the Flow-CPWS predicted-noise coefficient with its two first-order
    approximations, for a fixed sigma (Dance-GRPO style constant rule).
    """
    rule = SigmaRule(kind=SigmaKind.DANCE_GRPO, eta=sigma)
    cpws = cpws_coefficients(t, dt, rule).pred_noise
    sde = flow_sde_coefficients(t, dt, rule).pred_noise
    s = t - dt
    intermediate = s - sigma * sigma * dt / (2.0 * s) if s > 0.0 else math.nan
    return TaylorGap(t=t, dt=dt, sigma=sigma, cpws=cpws, intermediate=intermediate, flow_sde=sde)


def vp_sde_coeff_drift(beta: float, dt: float) -> float:
    """
    |(1 - beta dt / 2)^2 + beta dt - 1|: how far the first-order VP-SDE forward
    step's squared coefficients drift from summing to 1 (exactly beta^2 dt^2 / 4).
    """
    if beta < 0.0 or dt < 0.0:
        raise ScheduleDomainError(f"beta and dt must be non-negative, got beta={beta!r}, dt={dt!r}")
    if beta * dt >= 1.0:
        raise ScheduleDomainError(f"beta * dt must be < 1, got {beta * dt!r}")
    half = 0.5 * beta * dt
    return abs((1.0 - half) ** 2 + beta * dt - 1.0)


def monte_carlo_noise_level(
    kind: SamplerKind,
    t: float,
    dt: float,
    draws: int,
    seed: int,
    data_dim: int = 2,
    resample_pred_noise: bool = True,
) -> MonteCarloNoiseEstimate:
    """
    Empirical std of one step's noise terms with x0_hat held at zero.

    With resample_pred_noise the predicted noise x1_hat is drawn as an
    independent standard normal (the idealisation behind the total noise
    level); without it x1_hat is held fixed and only eps varies.
    """
    if draws < 2:
        raise ValueError(f"Monte-Carlo audit needs at least 2 draws, got {draws!r}")
    coeffs = kind_coefficients(kind, t, dt)
    rng = make_rng(seed, STREAM_MONTE_CARLO)
    eps = rng.standard_normal((draws, data_dim))
    if resample_pred_noise:
        x1_hat = rng.standard_normal((draws, data_dim))
        expected = total_noise_level(coeffs.pred_noise, coeffs.fresh_noise)
    else:
        x1_hat = np.tile(rng.standard_normal(data_dim), (draws, 1))
        expected = abs(coeffs.fresh_noise)

    out = coeffs.pred_noise * x1_hat + coeffs.fresh_noise * eps
    std = out.std(axis=0, ddof=1)
    standard_error = std / math.sqrt(2.0 * (draws - 1))
    return MonteCarloNoiseEstimate(
        draws=draws,
        expected=expected,
        std=[float(v) for v in std],
        standard_error=[float(v) for v in standard_error],
    )


def terminal_variance_audit(
    kind: SamplerKind,
    field: VelocityField,
    grid: TimeGrid,
    n: int,
    seed: int,
    workers: Optional[int] = None,
) -> float:
    """
    RMS distance of n terminal samples to the point mass c.

    Rollout i uses seed + i; squared distances are summed exactly (fsum) so the
    result does not depend on the worker count.
    """
    if not isinstance(field, DeltaOracle):
        raise UnsupportedVelocityError(
            f"terminal_variance_audit needs a DeltaOracle, got {type(field).__name__}"
        )
    if n < 1000:
        raise ValueError(f"terminal_variance_audit needs n >= 1000, got {n!r}")
    validate_kind_on_grid(kind, grid)

    workers = workers or settings.threads
    chunk = -(-n // workers)
    bounds = [(start, min(start + chunk, n)) for start in range(0, n, chunk)]

    def run_chunk(bound):
        start, stop = bound
        squared = []
        for i in range(start, stop):
            diff = rollout(kind, field, grid, seed + i).terminal - field.center
            squared.append(float(diff @ diff))
        return squared

    logger.info(f"Terminal audit: {kind.label}, K={grid.K}, n={n}, workers={workers}")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        squared = [value for part in pool.map(run_chunk, bounds) for value in part]
    return math.sqrt(math.fsum(squared) / n)

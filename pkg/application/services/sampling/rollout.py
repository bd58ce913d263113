import logging
from typing import List, Optional

import numpy as np

from application.services.grpo.log_probability import LogProb, step_logprob
from application.services.sampling.coefficients import kind_coefficients
from application.services.sampling.steps import kind_step
from application.services.velocity.base import VelocityField
from core.exceptions import ConfigurationError, FlowCpsError, RolloutStepError
from domain.entities.sampler import SamplerFamily, SamplerKind, SamplerStepReport, Trajectory
from domain.entities.schedule import TimeGrid

logger = logging.getLogger(__name__)


def validate_kind_on_grid(kind: SamplerKind, grid: TimeGrid) -> None:
    """Check every step's coefficients up front (e.g. the Flow-CPWS radicand)"""
    if kind.family == SamplerFamily.DDIM_REF:
        raise ConfigurationError("ddim_ref needs a noise-prediction network and cannot be rolled out")
    for k, (t, dt) in enumerate(grid.transitions()):
        try:
            kind_coefficients(kind, t, dt)
        except FlowCpsError as e:
            raise RolloutStepError(k, t, dt, e) from e


def rollout(
    kind: SamplerKind,
    field: VelocityField,
    grid: TimeGrid,
    seed: int,
    x_init: Optional[np.ndarray] = None,
) -> Trajectory:
    """
    Run a sampler over the grid from t = 1 to t = 0.

    The generator seeded with `seed` first draws the initial state (unless x_init
    is given), then one eps per stochastic step. x_init may be a batch (N, D).
    """
    validate_kind_on_grid(kind, grid)
    rng = np.random.default_rng(seed)
    if x_init is None:
        x = rng.standard_normal(field.data_dim)
    else:
        x = np.array(x_init, dtype=np.float64)

    states = [(grid.steps[0], x)]
    reports: List[SamplerStepReport] = []
    logprob_terms: List[LogProb] = []

    for k, (t, dt) in enumerate(grid.transitions()):
        eps = rng.standard_normal(x.shape) if kind.is_stochastic else np.zeros_like(x)
        try:
            x, report = kind_step(kind, field, x, t, dt, eps)
        except FlowCpsError as e:
            logger.error(f"Rollout of {kind.label} failed at step {k} (t={t}, dt={dt}): {e}")
            raise RolloutStepError(k, t, dt, e) from e
        reports.append(report)
        states.append((grid.steps[k + 1], x))
        if kind.is_stochastic:
            logprob_terms.append(step_logprob(x, report.mu))

    return Trajectory(states=states, reports=reports, logprob_terms=logprob_terms)

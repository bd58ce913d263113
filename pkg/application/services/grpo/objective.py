import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from application.services.velocity.mlp import MlpVelocityField
from core.config.settings import settings
from core.exceptions import ObjectiveError
from domain.entities.grpo import GroupRollout

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def compute_advantages(rewards) -> np.ndarray:
    """Group-normalised advantages (r - mean) / max(std, floor), population std"""
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if r.shape[0] < 2:
        raise ValueError(f"Advantages need a group of at least 2 rewards, got {r.shape[0]}")
    if not np.all(np.isfinite(r)):
        raise ValueError("Rewards must be finite")
    std = max(float(r.std()), settings.advantage_std_floor)
    return (r - r.mean()) / std


def clipped_surrogate(ratio: ArrayLike, advantage: ArrayLike, clip_eps: float) -> ArrayLike:
    """min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)"""
    if not 0.0 < clip_eps < 1.0:
        raise ValueError(f"clip_eps must be in (0, 1), got {clip_eps!r}")
    ratio = np.asarray(ratio, dtype=np.float64)
    if np.any(ratio <= 0.0):
        raise ValueError("Importance ratios must be positive")
    advantage = np.asarray(advantage, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    out = np.minimum(ratio * advantage, clipped * advantage)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TransitionBatch:
    """
    Every (member, step) transition of an iteration flattened to rows.

    The step mean is linear in the velocity, mu = a * x + b * v(x, t), with
    a = c_sample + c_pred_noise and b = c_pred_noise * (1 - t) - c_sample * t.
    """
    x: np.ndarray            # (N, D) state before the step
    t: np.ndarray            # (N,)
    x_next: np.ndarray       # (N, D)
    mean_scale: np.ndarray   # (N,) a
    velocity_scale: np.ndarray  # (N,) b
    fresh_noise: np.ndarray  # (N,) c_fresh_noise
    advantage: np.ndarray    # (N,) advantage of the member the row belongs to

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def mean(self, velocity: np.ndarray) -> np.ndarray:
        return self.mean_scale[:, None] * self.x + self.velocity_scale[:, None] * velocity


def build_transition_batch(groups: List[GroupRollout]) -> TransitionBatch:
    xs, ts, x_nexts, a, b, c_f, adv = [], [], [], [], [], [], []
    for group in groups:
        for member, advantage in zip(group.members, group.advantages):
            for k, report in enumerate(member.reports):
                xs.append(member.states[k][1])
                x_nexts.append(member.states[k + 1][1])
                ts.append(report.t)
                a.append(report.coeff_sample + report.coeff_pred_noise)
                b.append(report.coeff_pred_noise * (1.0 - report.t) - report.coeff_sample * report.t)
                c_f.append(report.coeff_fresh_noise)
                adv.append(advantage)
    if not xs:
        raise ValueError("No transitions to optimise over")
    return TransitionBatch(
        x=np.stack(xs),
        t=np.asarray(ts, dtype=np.float64),
        x_next=np.stack(x_nexts),
        mean_scale=np.asarray(a, dtype=np.float64),
        velocity_scale=np.asarray(b, dtype=np.float64),
        fresh_noise=np.asarray(c_f, dtype=np.float64),
        advantage=np.asarray(adv, dtype=np.float64),
    )


@dataclass(frozen=True)
class ObjectiveResult:
    value: float
    grad: np.ndarray
    ratios: np.ndarray
    clip_frac: float
    kl: float

    @property
    def mean_ratio(self) -> float:
        return float(self.ratios.mean())


def _row_logprob(batch: TransitionBatch, mu: np.ndarray) -> np.ndarray:
    diff = batch.x_next - mu
    return -np.sum(diff * diff, axis=1)


def batch_logprob(policy: MlpVelocityField, batch: TransitionBatch) -> np.ndarray:
    """Simplified per-row log-probability -||x_next - mu||^2 under `policy`"""
    return _row_logprob(batch, batch.mean(policy.velocity(batch.x, batch.t)))


def surrogate_objective(
    policy: MlpVelocityField,
    batch: TransitionBatch,
    old_logprob: np.ndarray,
    clip_eps: float,
    kl_beta: float = 0.0,
    reference_mean: Optional[np.ndarray] = None,
) -> ObjectiveResult:
    """
    Mean clipped surrogate over all transitions minus kl_beta times the mean KL
    to the reference policy, with its gradient in the policy parameters.

    The KL between two Gaussians sharing sigma = c_fresh_noise is
    ||mu - mu_ref||^2 / (2 sigma^2); steps with sigma = 0 are left out.
    """
    velocity, cache = policy.forward(batch.x, batch.t)
    mu = batch.mean(velocity)
    diff = batch.x_next - mu
    log_ratio = _row_logprob(batch, mu) - old_logprob
    ratios = np.exp(log_ratio)
    if np.any(ratios == 0.0):
        raise ObjectiveError(
            "Importance ratio underflowed to zero",
            {"min_log_ratio": float(np.min(log_ratio)), "rows": batch.size},
        )

    A = batch.advantage
    surrogate = clipped_surrogate(ratios, A, clip_eps)
    n = batch.size
    value = float(surrogate.sum() / n)

    # gradient flows only where the min picked the unclipped branch
    active = (ratios * A == surrogate).astype(np.float64)
    d_logprob = active * A * ratios / n
    grad_mu = (2.0 * d_logprob)[:, None] * diff

    kl = 0.0
    if kl_beta > 0.0:
        if reference_mean is None:
            raise ValueError("kl_beta > 0 needs the reference policy's step means")
        mask = batch.fresh_noise > 0.0
        count = int(mask.sum())
        if count:
            sigma2 = np.where(mask, batch.fresh_noise, 1.0) ** 2
            gap = mu - reference_mean
            per_row = np.where(mask, np.sum(gap * gap, axis=1) / (2.0 * sigma2), 0.0)
            kl = float(per_row.sum() / count)
            value -= kl_beta * kl
            grad_mu -= (kl_beta * mask / (sigma2 * count))[:, None] * gap

    grad_v = batch.velocity_scale[:, None] * grad_mu
    grad = policy.backward(cache, grad_v)

    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise ObjectiveError(
            "Non-finite GRPO objective",
            {"objective": value, "max_log_ratio": float(np.max(np.abs(log_ratio))), "kl": kl},
        )
    clip_frac = float(np.mean(np.abs(ratios - 1.0) > clip_eps))
    return ObjectiveResult(value=value, grad=grad, ratios=ratios, clip_frac=clip_frac, kl=kl)

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from typing import List, Optional, Tuple

import numpy as np

from application.services.grpo.objective import (
    batch_logprob,
    build_transition_batch,
    compute_advantages,
    surrogate_objective,
)
from application.services.grpo.rewards import evaluate_reward
from application.services.sampling.rollout import rollout
from application.services.seeding import STREAM_EVAL_NOISE, STREAM_GRPO_GROUPS, derive_seed, make_rng
from application.services.velocity.mlp import MlpVelocityField
from core.config.settings import settings
from core.exceptions import ObjectiveError
from domain.entities.grpo import GroupRollout, GrpoConfig, IterationStats, RewardSpec
from domain.entities.sampler import SamplerKind
from domain.entities.schedule import TimeGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UpdateStats:
    """Training-side numbers from one policy update"""
    mean_train_reward: float
    mean_ratio: float
    clip_frac: float
    grad_norm: float
    objective: float
    kl: float


@dataclass
class RunArtifact:
    config: GrpoConfig
    policy: MlpVelocityField
    history: List[IterationStats] = dataclass_field(default_factory=list)
    final_eval_reward: float = float("nan")
    final_eval_std: float = 0.0

    @property
    def eval_curve(self) -> List[float]:
        """Eval reward before each update, then after the last one"""
        return [row.mean_eval_reward for row in self.history] + [self.final_eval_reward]

    @property
    def auc(self) -> float:
        """Area under the eval-reward curve, normalised by its length"""
        return float(np.mean(self.eval_curve))


def sample_group(
    policy: MlpVelocityField,
    kind: SamplerKind,
    grid: TimeGrid,
    group_size: int,
    prompt_seed: int,
    reward: RewardSpec,
) -> GroupRollout:
    """G rollouts of one group; member i uses derive_seed(prompt_seed, i)"""
    members = [rollout(kind, policy, grid, derive_seed(prompt_seed, i)) for i in range(group_size)]
    rewards = np.array([evaluate_reward(reward, m.terminal) for m in members], dtype=np.float64)
    return GroupRollout(
        prompt_seed=prompt_seed,
        members=members,
        rewards=rewards,
        advantages=compute_advantages(rewards),
    )


def clip_gradient(grad: np.ndarray, max_norm: Optional[float]) -> Tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grad))
    if max_norm is not None and norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def grpo_iteration(
    policy: MlpVelocityField,
    old_policy: MlpVelocityField,
    config: GrpoConfig,
    reward: RewardSpec,
    grid: TimeGrid,
    seed: int,
    reference: Optional[MlpVelocityField] = None,
    workers: Optional[int] = None,
) -> Tuple[MlpVelocityField, UpdateStats]:
    """
    Sample groups with old_policy, then take one gradient-ascent step on the
    clipped surrogate from `policy`. Returns a new field; inputs are untouched.
    """
    workers = workers or settings.threads
    prompt_seeds = [derive_seed(seed, g) for g in range(config.groups_per_iter)]

    def run_group(prompt_seed: int) -> GroupRollout:
        return sample_group(old_policy, config.sampler, grid, config.G, prompt_seed, reward)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        groups = list(pool.map(run_group, prompt_seeds))

    batch = build_transition_batch(groups)
    old_logprob = batch_logprob(old_policy, batch)
    reference_mean = None
    if config.kl_beta > 0.0:
        if reference is None:
            raise ValueError("kl_beta > 0 needs a reference policy")
        reference_mean = batch.mean(reference.velocity(batch.x, batch.t))

    result = surrogate_objective(policy, batch, old_logprob, config.clip_eps, config.kl_beta, reference_mean)
    grad, grad_norm = clip_gradient(result.grad, config.max_grad_norm)
    updated = policy.with_params(policy.params + config.lr * grad)

    stats = UpdateStats(
        mean_train_reward=float(np.mean([g.rewards.mean() for g in groups])),
        mean_ratio=result.mean_ratio,
        clip_frac=result.clip_frac,
        grad_norm=grad_norm,
        objective=result.value,
        kl=result.kl,
    )
    return updated, stats


def make_evaluator(config: GrpoConfig, reward: RewardSpec, grid: TimeGrid, data_dim: int):
    """
    Deterministic evaluation: the configured sampler at eta = 0 from a fixed
    batch of initial noise shared by every iteration.
    """
    eval_noise = make_rng(config.seed, STREAM_EVAL_NOISE).standard_normal((config.eval_batch, data_dim))
    eval_kind = config.sampler.with_eta(0.0)

    def evaluate(policy: MlpVelocityField) -> Tuple[float, float]:
        terminal = rollout(eval_kind, policy, grid, seed=0, x_init=eval_noise).terminal
        rewards = np.asarray(evaluate_reward(reward, terminal), dtype=np.float64)
        return float(rewards.mean()), float(rewards.std())

    return evaluate


def run_experiment(
    config: GrpoConfig,
    reward: RewardSpec,
    base: MlpVelocityField,
    grid: TimeGrid,
    workers: Optional[int] = None,
) -> RunArtifact:
    """
    Fine-tune `base` with GRPO for config.iters iterations.

    Sampling always uses the policy from the start of the iteration (one update
    per batch), and the KL reference is the base model.
    """
    logger.info(
        f"GRPO run: sampler={config.sampler.label}, G={config.G}, groups={config.groups_per_iter}, "
        f"iters={config.iters}, K={grid.K}, seed={config.seed}"
    )
    evaluate = make_evaluator(config, reward, grid, base.data_dim)
    reference = base.copy()
    policy = base.copy()
    artifact = RunArtifact(config=config, policy=policy)

    for i in range(config.iters):
        eval_mean, eval_std = evaluate(policy)
        old_policy = policy.copy()
        try:
            policy, update = grpo_iteration(
                policy,
                old_policy,
                config,
                reward,
                grid,
                derive_seed(config.seed, STREAM_GRPO_GROUPS, i),
                reference=reference,
                workers=workers,
            )
        except ObjectiveError as e:
            e.diagnostics.setdefault("iter", i)
            e.partial = artifact
            logger.error(f"GRPO run {config.sampler.label} failed at iteration {i}: {e}")
            artifact.policy = old_policy
            raise
        row = IterationStats(
            iter=i,
            mean_train_reward=update.mean_train_reward,
            mean_eval_reward=eval_mean,
            clip_frac=update.clip_frac,
            mean_ratio=update.mean_ratio,
            grad_norm=update.grad_norm,
            objective=update.objective,
            kl=update.kl,
            eval_reward_std=eval_std,
        )
        artifact.history.append(row)
        if i % 10 == 0 or i == config.iters - 1:
            logger.info(
                f"[{config.sampler.label}] iter {i}: eval={eval_mean:.4f} train={update.mean_train_reward:.4f} "
                f"ratio={update.mean_ratio:.4f} clip_frac={update.clip_frac:.3f} grad_norm={update.grad_norm:.4g}"
            )

    artifact.policy = policy
    artifact.final_eval_reward, artifact.final_eval_std = evaluate(policy)
    if not math.isfinite(artifact.final_eval_reward):
        raise ObjectiveError("Non-finite final eval reward", {"sampler": config.sampler.label})
    return artifact

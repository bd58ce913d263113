import functools
import math

import numpy as np
import pytest

from application.services.grpo.log_probability import full_logprob, step_logprob
from application.services.grpo.objective import (
    batch_logprob,
    build_transition_batch,
    clipped_surrogate,
    compute_advantages,
    surrogate_objective,
)
from application.services.grpo.rewards import evaluate_reward
from application.services.grpo.trainer import grpo_iteration, run_experiment, sample_group
from application.services.schedule_service import uniform_grid
from application.services.velocity import MlpVelocityField
from application.services.velocity.data import make_data_sampler
from application.services.velocity.training_service import train_fm
from core.exceptions import ObjectiveError, ScheduleDomainError
from domain.entities.grpo import GrpoConfig, RewardKind, RewardSpec
from domain.entities.sampler import SamplerKind
from domain.entities.schedule import SigmaKind
from domain.entities.velocity import DataKind, DataSpec, MlpArchitecture

TINY = MlpArchitecture(data_dim=2, hidden=[8])
NEG_DISTANCE = RewardSpec(kind=RewardKind.NEG_DISTANCE, target=[2.0, 0.0])


def tiny_policy(seed=0):
    return MlpVelocityField.initialize(TINY, np.random.default_rng(seed))


def small_config(sampler=None, **overrides):
    fields = dict(
        sampler=sampler or SamplerKind.cps(0.7),
        group_size=4,
        groups_per_iter=2,
        iters=2,
        lr=0.05,
        seed=3,
        eval_batch=16,
    )
    fields.update(overrides)
    return GrpoConfig(**fields)


def test_advantage_examples():
    np.testing.assert_array_equal(compute_advantages([1, 1, 1]), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(compute_advantages([0, 1]), [-1.0, 1.0])
    np.testing.assert_allclose(compute_advantages([1, 2, 3]), [-1.2247449, 0.0, 1.2247449], atol=1e-7)


def test_advantages_need_a_group():
    with pytest.raises(ValueError):
        compute_advantages([1.0])


def test_step_logprob():
    assert step_logprob(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0
    assert step_logprob(np.array([1.0, 1.0]), np.array([0.0, 0.0])) == -2.0


def test_full_logprob_standard_normal():
    assert full_logprob(np.array([0.0]), np.array([0.0]), 1.0) == pytest.approx(-0.91894, abs=1e-5)


def test_full_logprob_ratio_is_one_for_identical_means():
    mu = np.array([0.3, -0.2])
    x = np.array([0.1, 0.4])
    assert math.exp(full_logprob(x, mu, 0.2) - full_logprob(x, mu, 0.2)) == 1.0


def test_full_logprob_needs_positive_sigma():
    with pytest.raises(ScheduleDomainError):
        full_logprob(np.zeros(2), np.zeros(2), 0.0)
    assert math.isfinite(step_logprob(np.zeros(2), np.zeros(2)))


@pytest.mark.parametrize(
    "ratio, advantage, expected",
    [(1.0, 0.7, 0.7), (1.5, 1.0, 1.2), (0.5, -1.0, -0.8), (0.5, 1.0, 0.5), (1.5, -1.0, -1.5)],
)
def test_clipped_surrogate(ratio, advantage, expected):
    assert clipped_surrogate(ratio, advantage, 0.2) == pytest.approx(expected)


def test_clipped_surrogate_validates():
    with pytest.raises(ValueError):
        clipped_surrogate(0.0, 1.0, 0.2)
    with pytest.raises(ValueError):
        clipped_surrogate(1.0, 1.0, 1.5)


def test_rewards():
    x = np.array([[2.0, 0.0], [5.0, 4.0]])
    np.testing.assert_allclose(evaluate_reward(NEG_DISTANCE, x), [0.0, -5.0])
    indicator = RewardSpec(kind=RewardKind.MODE_INDICATOR, target=[2.0, 0.0], radius=0.5)
    np.testing.assert_array_equal(evaluate_reward(indicator, x), [1.0, 0.0])
    assert evaluate_reward(indicator, np.array([2.2, 0.1])) == 1.0


def test_mode_indicator_needs_radius():
    with pytest.raises(ValueError):
        RewardSpec(kind=RewardKind.MODE_INDICATOR, target=[0.0, 0.0])


def test_grpo_config_rejects_deterministic_sampler():
    with pytest.raises(ValueError):
        small_config(SamplerKind.ode())
    with pytest.raises(ValueError):
        small_config(group_size=1)
    assert small_config(SamplerKind.flow_sde(SigmaKind.DANCE_GRPO, 0.3)).eta == 0.3


def make_batch(policy, sampler, seed, reward=NEG_DISTANCE):
    groups = [sample_group(policy, sampler, uniform_grid(4), 4, seed + g, reward) for g in range(2)]
    return build_transition_batch(groups)


def finite_difference(fn, params, h=1e-5):
    grad = np.zeros_like(params)
    for i in range(params.shape[0]):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(5))
def test_surrogate_gradient_matches_finite_differences(seed):
    old = tiny_policy(seed)
    batch = make_batch(old, SamplerKind.flow_sde(SigmaKind.DANCE_GRPO, 0.7), seed)
    old_logprob = batch_logprob(old, batch)
    rng = np.random.default_rng(100 + seed)
    policy = old.with_params(old.params + 1e-3 * rng.standard_normal(old.params.shape))

    result = surrogate_objective(policy, batch, old_logprob, clip_eps=0.2)
    assert np.all(np.abs(result.ratios - 1.0) < 0.2)
    numeric = finite_difference(
        lambda p: surrogate_objective(policy.with_params(p), batch, old_logprob, 0.2).value, policy.params
    )
    assert np.max(np.abs(result.grad - numeric)) / np.max(np.abs(numeric)) < 1e-3


def test_kl_gradient_matches_finite_differences():
    old = tiny_policy(7)
    batch = make_batch(old, SamplerKind.cps(0.7), 7)
    old_logprob = batch_logprob(old, batch)
    reference = tiny_policy(8)
    reference_mean = batch.mean(reference.velocity(batch.x, batch.t))

    result = surrogate_objective(old, batch, old_logprob, 0.2, kl_beta=0.5, reference_mean=reference_mean)
    assert result.kl > 0
    numeric = finite_difference(
        lambda p: surrogate_objective(old.with_params(p), batch, old_logprob, 0.2, 0.5, reference_mean).value,
        old.params,
    )
    assert np.max(np.abs(result.grad - numeric)) / np.max(np.abs(numeric)) < 1e-3


def test_ratios_are_one_at_the_old_policy():
    old = tiny_policy(1)
    batch = make_batch(old, SamplerKind.cps(0.5), 1)
    result = surrogate_objective(old.copy(), batch, batch_logprob(old, batch), 0.2)
    np.testing.assert_array_equal(result.ratios, np.ones(batch.size))
    assert result.clip_frac == 0.0


def test_transition_mean_matches_rollout_reports():
    policy = tiny_policy(2)
    group = sample_group(policy, SamplerKind.flow_sde(SigmaKind.FLOW_GRPO, 0.5), uniform_grid(4), 4, 9, NEG_DISTANCE)
    batch = build_transition_batch([group])
    means = batch.mean(policy.velocity(batch.x, batch.t))
    reports = [r.mu for member in group.members for r in member.reports]
    np.testing.assert_allclose(means, np.stack(reports), atol=1e-12)


def test_non_finite_objective_raises():
    old = tiny_policy(3)
    batch = make_batch(old, SamplerKind.cps(0.5), 3)
    negative = type(batch)(**{**batch.__dict__, "advantage": -np.ones(batch.size)})
    with pytest.raises(ObjectiveError):
        surrogate_objective(old, negative, np.full(batch.size, -1e6), 0.2)


def test_objective_value_is_the_mean_clipped_surrogate():
    old = tiny_policy(6)
    batch = make_batch(old, SamplerKind.cps(0.7), 6)
    old_logprob = batch_logprob(old, batch)
    rng = np.random.default_rng(60)
    policy = old.with_params(old.params + 0.2 * rng.standard_normal(old.params.shape))

    result = surrogate_objective(policy, batch, old_logprob, clip_eps=0.05)
    assert result.clip_frac > 0.0
    expected = np.mean(clipped_surrogate(result.ratios, batch.advantage, 0.05))
    assert result.value == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_underflowed_ratio_raises():
    old = tiny_policy(3)
    batch = make_batch(old, SamplerKind.cps(0.5), 3)
    with pytest.raises(ObjectiveError):
        surrogate_objective(old, batch, np.full(batch.size, 1e6), 0.2)


@pytest.mark.parametrize("seed", range(4))
def test_advantages_are_centered_and_shift_invariant(seed):
    rewards = np.random.default_rng(seed).normal(size=8)
    advantages = compute_advantages(rewards)
    assert abs(advantages.sum()) < 1e-12
    np.testing.assert_allclose(compute_advantages(rewards + 17.5), advantages, atol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_step_logprob_depends_only_on_the_difference(seed):
    rng = np.random.default_rng(seed)
    x, mu, shift = rng.normal(size=(3, 5))
    assert step_logprob(x + shift, mu + shift) == pytest.approx(step_logprob(x, mu), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("clip_eps", [0.05, 0.2, 0.5])
@pytest.mark.parametrize("advantage", [-2.0, -0.3, 0.0, 0.4, 3.0])
def test_clipped_surrogate_is_bounded(clip_eps, advantage):
    ratios = np.array([1e-3, 0.5, 0.9, 1.0, 1.1, 1.6, 4.0, 50.0])
    values = clipped_surrogate(ratios, advantage, clip_eps)
    bound = np.maximum(abs(advantage) * (1.0 + clip_eps), np.abs(advantage * ratios))
    assert np.all(np.abs(values) <= bound + 1e-12)


def test_zero_advantages_leave_policy_unchanged():
    policy = tiny_policy(4)
    unreachable = RewardSpec(kind=RewardKind.MODE_INDICATOR, target=[100.0, 100.0], radius=0.1)
    updated, stats = grpo_iteration(policy, policy.copy(), small_config(), unreachable, uniform_grid(4), seed=5)
    np.testing.assert_array_equal(updated.params, policy.params)
    assert stats.grad_norm == 0.0


def test_iteration_does_not_mutate_inputs():
    policy = tiny_policy(5)
    before = policy.params.copy()
    updated, stats = grpo_iteration(policy, policy.copy(), small_config(), NEG_DISTANCE, uniform_grid(4), seed=6)
    np.testing.assert_array_equal(policy.params, before)
    assert not np.array_equal(updated.params, before)
    assert stats.mean_ratio == 1.0


def test_gradient_clipping_caps_update():
    policy = tiny_policy(6)
    config = small_config(max_grad_norm=1e-3, lr=1.0)
    updated, stats = grpo_iteration(policy, policy.copy(), config, NEG_DISTANCE, uniform_grid(4), seed=7)
    assert np.linalg.norm(updated.params - policy.params) == pytest.approx(min(stats.grad_norm, 1e-3), rel=1e-9)


def test_kl_needs_reference():
    policy = tiny_policy(6)
    with pytest.raises(ValueError):
        grpo_iteration(policy, policy.copy(), small_config(kl_beta=0.1), NEG_DISTANCE, uniform_grid(4), seed=1)


def test_run_with_zero_iterations_returns_base():
    base = tiny_policy(8)
    artifact = run_experiment(small_config(iters=0), NEG_DISTANCE, base, uniform_grid(4))
    np.testing.assert_array_equal(artifact.policy.params, base.params)
    assert artifact.history == []
    assert artifact.eval_curve == [artifact.final_eval_reward]


def test_run_is_reproducible_and_worker_independent():
    base = tiny_policy(9)
    config = small_config(iters=3)
    first = run_experiment(config, NEG_DISTANCE, base, uniform_grid(4), workers=1)
    second = run_experiment(config, NEG_DISTANCE, base, uniform_grid(4), workers=3)
    np.testing.assert_array_equal(first.policy.params, second.policy.params)
    assert [row.model_dump() for row in first.history] == [row.model_dump() for row in second.history]
    assert len(first.history) == 3


def test_variants_share_iteration_zero_eval():
    base = tiny_policy(10)
    cps = run_experiment(small_config(SamplerKind.cps(0.7), iters=1), NEG_DISTANCE, base, uniform_grid(4))
    sde = run_experiment(
        small_config(SamplerKind.flow_sde(SigmaKind.DANCE_GRPO, 0.7), iters=1), NEG_DISTANCE, base, uniform_grid(4)
    )
    assert cps.history[0].mean_eval_reward == sde.history[0].mean_eval_reward


def test_kl_run_records_divergence():
    base = tiny_policy(11)
    artifact = run_experiment(small_config(kl_beta=0.1, iters=2), NEG_DISTANCE, base, uniform_grid(4))
    assert artifact.history[0].kl == 0.0
    assert artifact.history[1].kl > 0.0


@functools.lru_cache(maxsize=None)
def desk_base_model():
    spec = DataSpec(kind=DataKind.MIXTURE, centers=[[-2.0, 0.0], [2.0, 0.0]], std=0.3)
    return train_fm(
        MlpArchitecture(hidden=[64, 64]), make_data_sampler(spec), steps=4000, lr=0.01, seed=0, momentum=0.9
    )


def desk_comparison(seed):
    runs = []
    for sampler in (SamplerKind.cps(0.7), SamplerKind.flow_sde(SigmaKind.DANCE_GRPO, 0.7)):
        config = GrpoConfig(sampler=sampler, group_size=8, groups_per_iter=4, iters=200, lr=0.05, seed=seed)
        runs.append(run_experiment(config, NEG_DISTANCE, desk_base_model(), uniform_grid(8)))
    return runs


@pytest.mark.slow
def test_desk_scale_comparison_improves_both_samplers():
    curves = [run.eval_curve for run in desk_comparison(1)]
    assert curves[0][0] == curves[1][0]
    for curve in curves:
        assert curve[-1] > curve[0]


@pytest.mark.slow
def test_cps_has_larger_auc_in_most_seed_replicates():
    wins = 0
    for seed in range(5):
        cps, sde = desk_comparison(seed)
        assert cps.eval_curve[0] == sde.eval_curve[0]
        wins += cps.auc >= sde.auc
    assert wins >= 4

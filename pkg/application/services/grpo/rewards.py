from typing import Union

import numpy as np

from domain.entities.grpo import RewardKind, RewardSpec


def evaluate_reward(spec: RewardSpec, x: np.ndarray) -> Union[float, np.ndarray]:
    """Reward of a terminal point (D,) or of each row of a batch (N, D)"""
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(spec.target, dtype=np.float64)
    if x.shape[-1] != target.shape[0]:
        raise ValueError(f"Reward target has dimension {target.shape[0]}, samples have {x.shape[-1]}")
    distance = np.linalg.norm(x - target, axis=-1)
    if spec.kind == RewardKind.NEG_DISTANCE:
        reward = -distance
    else:
        reward = (distance <= spec.radius).astype(np.float64)
    return float(reward) if np.ndim(reward) == 0 else reward

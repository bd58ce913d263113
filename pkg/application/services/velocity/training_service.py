import logging
import math
from dataclasses import dataclass, field as dataclass_field
from typing import List, Optional, Tuple

import numpy as np

from application.services.seeding import STREAM_FM_BATCHES, STREAM_INIT, make_rng
from application.services.velocity.base import VelocityField
from application.services.velocity.data import DataSampler
from application.services.velocity.mlp import MlpVelocityField
from core.exceptions import TrainingDivergenceError, UnsupportedVelocityError
from domain.entities.velocity import MlpArchitecture

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowMatchingBatch:
    """Rows of (x0, x1, t); the regression target is x1 - x0 at x_t = (1 - t) x0 + t x1"""
    x0: np.ndarray  # (N, D)
    x1: np.ndarray  # (N, D)
    t: np.ndarray   # (N,)

    def __post_init__(self):
        if self.x0.shape[0] == 0:
            raise ValueError("Flow-matching batch must not be empty")
        if self.x0.shape != self.x1.shape or self.t.shape != (self.x0.shape[0],):
            raise ValueError(
                f"Inconsistent batch shapes: x0={self.x0.shape}, x1={self.x1.shape}, t={self.t.shape}"
            )

    @property
    def interpolant(self) -> np.ndarray:
        tc = self.t.reshape(-1, 1)
        return (1.0 - tc) * self.x0 + tc * self.x1

    @property
    def target(self) -> np.ndarray:
        return self.x1 - self.x0


def fm_loss_and_grad(field: VelocityField, batch: FlowMatchingBatch) -> Tuple[float, np.ndarray]:
    """Mean squared velocity residual over the batch and its exact parameter gradient"""
    if not isinstance(field, MlpVelocityField):
        raise UnsupportedVelocityError(
            f"fm_loss_and_grad needs an MLP field, got {type(field).__name__}"
        )
    out, cache = field.forward(batch.interpolant, batch.t)
    residual = out - batch.target
    n = residual.shape[0]
    loss = float(np.sum(residual * residual) / n)
    grad = field.backward(cache, 2.0 * residual / n)
    return loss, grad


@dataclass
class TrainingOutcome:
    field: MlpVelocityField
    losses: List[float] = dataclass_field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


class FlowMatchingTrainer:
    """
    Plain SGD (optional heavy-ball momentum) on the flow-matching regression loss.

    With final_lr set the step size follows a cosine from lr down to final_lr.
    """

    def __init__(
        self,
        architecture: MlpArchitecture,
        lr: float,
        momentum: float = 0.0,
        batch_size: int = 256,
        final_lr: Optional[float] = None,
    ):
        if lr <= 0.0:
            raise ValueError(f"Learning rate must be positive, got {lr!r}")
        if final_lr is not None and not (0.0 < final_lr <= lr):
            raise ValueError(f"final_lr must lie in (0, lr], got {final_lr!r}")
        if not (0.0 <= momentum < 1.0):
            raise ValueError(f"Momentum must lie in [0, 1), got {momentum!r}")
        if batch_size < 1:
            raise ValueError(f"Batch size must be >= 1, got {batch_size!r}")
        self.architecture = architecture
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.final_lr = final_lr

    def lr_at(self, step: int, steps: int) -> float:
        if self.final_lr is None:
            return self.lr
        return self.final_lr + 0.5 * (self.lr - self.final_lr) * (1.0 + math.cos(math.pi * step / steps))

    def sample_batch(self, data: DataSampler, rng: np.random.Generator) -> FlowMatchingBatch:
        n, d = self.batch_size, self.architecture.data_dim
        x0 = np.asarray(data(rng, n), dtype=np.float64).reshape(n, d)
        x1 = rng.standard_normal((n, d))
        t = rng.uniform(0.0, 1.0, size=n)
        return FlowMatchingBatch(x0=x0, x1=x1, t=t)

    def fit(self, data: DataSampler, steps: int, seed: int) -> TrainingOutcome:
        if steps < 1:
            raise ValueError(f"Training needs at least one step, got {steps!r}")

        field = MlpVelocityField.initialize(self.architecture, make_rng(seed, STREAM_INIT))
        batch_rng = make_rng(seed, STREAM_FM_BATCHES)
        update = np.zeros_like(field.params)
        outcome = TrainingOutcome(field=field)

        logger.info(
            f"Flow-matching pretraining: arch={self.architecture.layer_sizes}, steps={steps}, "
            f"lr={self.lr}, final_lr={self.final_lr}, momentum={self.momentum}, seed={seed}"
        )
        for step in range(steps):
            loss, grad = fm_loss_and_grad(field, self.sample_batch(data, batch_rng))
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                logger.error(f"Pretraining diverged at step {step}")
                raise TrainingDivergenceError(step, loss)
            outcome.losses.append(loss)
            update = self.momentum * update - self.lr_at(step, steps) * grad
            field.params += update

            if (step + 1) % 1000 == 0:
                logger.info(f"step {step + 1}/{steps}: loss={loss:.6f}")

        # one more evaluation so final_loss reflects the returned parameters
        final_loss, _ = fm_loss_and_grad(field, self.sample_batch(data, batch_rng))
        if not np.isfinite(final_loss):
            raise TrainingDivergenceError(steps, final_loss)
        outcome.losses.append(final_loss)
        return outcome


def train_fm(
    architecture: MlpArchitecture,
    data: DataSampler,
    steps: int,
    lr: float,
    seed: int,
    momentum: float = 0.0,
    batch_size: int = 256,
    final_lr: Optional[float] = None,
) -> MlpVelocityField:
    trainer = FlowMatchingTrainer(architecture, lr=lr, momentum=momentum, batch_size=batch_size, final_lr=final_lr)
    return trainer.fit(data, steps, seed).field

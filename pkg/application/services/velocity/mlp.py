import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from application.services.velocity.base import ArrayLike, VelocityField
from domain.entities.velocity import Activation, MlpArchitecture, StoredModel

logger = logging.getLogger(__name__)


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one forward pass"""
    inputs: List[np.ndarray]       # input to each linear layer
    activations: List[np.ndarray]  # activated output of each hidden layer
    squeeze: bool                  # caller passed a single point


class MlpVelocityField(VelocityField):
    """
    Numpy MLP velocity field with a hand-written reverse pass.

    Parameters live in one flat float64 vector laid out layer by layer as
    W (fan_in x fan_out, row-major) followed by b (fan_out). The time is appended
    to the coordinates as a raw scalar feature.
    """

    def __init__(self, architecture: MlpArchitecture, params: Optional[np.ndarray] = None):
        self.architecture = architecture
        self.data_dim = architecture.data_dim
        if params is None:
            params = np.zeros(architecture.param_count, dtype=np.float64)
        params = np.array(params, dtype=np.float64).reshape(-1)
        if params.shape[0] != architecture.param_count:
            raise ValueError(
                f"Expected {architecture.param_count} parameters for {architecture.layer_sizes}, "
                f"got {params.shape[0]}"
            )
        self.params = params

    @property
    def trainable(self) -> bool:
        return True

    @classmethod
    def initialize(cls, architecture: MlpArchitecture, rng: np.random.Generator) -> "MlpVelocityField":
        """Uniform init in [-a, a] with a = sqrt(1 / fan_in), biases included"""
        chunks = []
        sizes = architecture.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(1.0 / fan_in)
            chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            chunks.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(architecture, np.concatenate(chunks))

    def copy(self) -> "MlpVelocityField":
        return MlpVelocityField(self.architecture, self.params.copy())

    def with_params(self, params: np.ndarray) -> "MlpVelocityField":
        return MlpVelocityField(self.architecture, params)

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat parameter vector"""
        out = []
        offset = 0
        sizes = self.architecture.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = self.params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.params[offset:offset + fan_out]
            offset += fan_out
            out.append((W, b))
        return out

    def _activate(self, z: np.ndarray) -> np.ndarray:
        if self.architecture.activation == Activation.TANH:
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def _activation_grad(self, a: np.ndarray) -> np.ndarray:
        # expressed through the activated value
        if self.architecture.activation == Activation.TANH:
            return 1.0 - a * a
        return (a > 0.0).astype(np.float64)

    def forward(self, x: np.ndarray, t: ArrayLike) -> Tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        x2 = x.reshape(1, -1) if squeeze else x
        t_col = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (x2.shape[0], 1))
        h = np.concatenate([x2, t_col], axis=1)

        inputs, activations = [], []
        layers = self.layers()
        for i, (W, b) in enumerate(layers):
            inputs.append(h)
            z = h @ W + b
            if i < len(layers) - 1:
                h = self._activate(z)
                activations.append(h)
            else:
                h = z
        return h, ForwardCache(inputs=inputs, activations=activations, squeeze=squeeze)

    def backward(self, cache: ForwardCache, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of sum(grad_out * output) with respect to the flat parameters"""
        g = np.asarray(grad_out, dtype=np.float64)
        if cache.squeeze and g.ndim == 1:
            g = g.reshape(1, -1)

        layers = self.layers()
        grads: List[np.ndarray] = [None] * (2 * len(layers))
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            grads[2 * i] = (cache.inputs[i].T @ g).reshape(-1)
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ W.T) * self._activation_grad(cache.activations[i - 1])
        return np.concatenate(grads)

    def velocity(self, x: np.ndarray, t: ArrayLike) -> np.ndarray:
        out, cache = self.forward(x, t)
        return out[0] if cache.squeeze else out

    def to_stored(self) -> StoredModel:
        return StoredModel(architecture=self.architecture, params=self.params.copy())

    @classmethod
    def from_stored(cls, model: StoredModel) -> "MlpVelocityField":
        return cls(model.architecture, model.params)

from typing import Callable

import numpy as np

from domain.entities.velocity import DataKind, DataSpec

# Draws n samples of x0 as an (n, D) array
DataSampler = Callable[[np.random.Generator, int], np.ndarray]


def make_data_sampler(spec: DataSpec, data_dim: int = 2) -> DataSampler:
    if spec.kind == DataKind.DELTA:
        center = np.asarray(spec.center, dtype=np.float64)

        def sample(rng: np.random.Generator, n: int) -> np.ndarray:
            return np.tile(center, (n, 1))

        return sample

    if spec.kind == DataKind.GAUSSIAN:
        scale = spec.scale

        def sample(rng: np.random.Generator, n: int) -> np.ndarray:
            return scale * rng.standard_normal((n, data_dim))

        return sample

    centers = np.asarray(spec.centers, dtype=np.float64)
    std = spec.std

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        picks = rng.integers(0, centers.shape[0], size=n)
        return centers[picks] + std * rng.standard_normal((n, centers.shape[1]))

    return sample

"""
Exact velocity fields for data distributions with a closed-form conditional mean.

Both oracles solve E[x1 - x0 | x_t] for x_t = (1 - t) x0 + t x1 with x1 ~ N(0, I).
"""

from typing import Sequence, Tuple

import numpy as np

from application.services.velocity.base import ArrayLike, VelocityField, as_time_column
from core.exceptions import SingularityError


class DeltaOracle(VelocityField):
    """Point-mass data at c: v = (x - c) / t"""

    def __init__(self, center: Sequence[float]):
        self.center = np.asarray(center, dtype=np.float64)
        self.data_dim = int(self.center.shape[0])

    def velocity(self, x: np.ndarray, t: ArrayLike) -> np.ndarray:
        if np.any(np.asarray(t) <= 0.0):
            raise SingularityError("DeltaOracle velocity is singular at t=0")
        return (x - self.center) / as_time_column(x, t)


class GaussianOracle(VelocityField):
    """Data x0 ~ N(0, s^2 I): v = (t - (1 - t) s^2) x / ((1 - t)^2 s^2 + t^2)"""

    def __init__(self, scale: float, data_dim: int = 2):
        if scale <= 0.0:
            raise ValueError(f"GaussianOracle scale must be positive, got {scale!r}")
        self.scale = float(scale)
        self.data_dim = data_dim

    def _variance(self, t: np.ndarray) -> np.ndarray:
        s2 = self.scale ** 2
        return (1.0 - t) ** 2 * s2 + t ** 2

    def velocity(self, x: np.ndarray, t: ArrayLike) -> np.ndarray:
        tc = as_time_column(x, t)
        s2 = self.scale ** 2
        return (tc - (1.0 - tc) * s2) * x / self._variance(tc)

    def posterior_means(self, x: np.ndarray, t: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        """(E[x0 | x_t], E[x1 | x_t])"""
        tc = as_time_column(x, t)
        var = self._variance(tc)
        return (1.0 - tc) * self.scale ** 2 * x / var, tc * x / var

from abc import ABC, abstractmethod
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class VelocityField(ABC):
    """Queryable velocity estimate v(x, t) of x1 - x0 given the interpolant x_t"""

    data_dim: int

    @property
    def trainable(self) -> bool:
        return False

    @abstractmethod
    def velocity(self, x: np.ndarray, t: ArrayLike) -> np.ndarray:
        """
        Evaluate the field.

        Args:
            x: state of shape (D,) or a batch of shape (N, D)
            t: scalar noise level, or shape (N,) matching the batch

        Returns:
            Array with the same shape as x
        """
        pass


def as_time_column(x: np.ndarray, t: ArrayLike) -> np.ndarray:
    """Broadcast t against x so it can scale rows of x"""
    t_arr = np.asarray(t, dtype=np.float64)
    if t_arr.ndim == 0 or x.ndim == 1:
        return t_arr
    return t_arr.reshape(-1, 1)


def eval_velocity(field: VelocityField, x: np.ndarray, t: ArrayLike) -> np.ndarray:
    return field.velocity(np.asarray(x, dtype=np.float64), t)

import math
from typing import Union

import numpy as np

from core.exceptions import ScheduleDomainError

LogProb = Union[float, np.ndarray]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _squared_distance(x_next: np.ndarray, mu: np.ndarray) -> LogProb:
    x_next = np.asarray(x_next, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x_next.shape != mu.shape:
        raise ValueError(f"Shape mismatch: x_next {x_next.shape} vs mu {mu.shape}")
    diff = x_next - mu
    sq = np.sum(diff * diff, axis=-1)
    return float(sq) if np.ndim(sq) == 0 else sq


def step_logprob(x_next: np.ndarray, mu: np.ndarray) -> LogProb:
    """
    Simplified transition log-probability -||x_next - mu||^2.

    The Gaussian normaliser and the 1/(2 sigma^2) scale are shared by the
    numerator and denominator of an importance ratio at a given step, so they
    are dropped; this also keeps the final (sigma = 0) step finite.
    """
    return -_squared_distance(x_next, mu)


def full_logprob(x_next: np.ndarray, mu: np.ndarray, sigma: float) -> LogProb:
    """Isotropic Gaussian log-density N(x_next; mu, sigma^2 I) summed over coordinates"""
    if sigma <= 0.0:
        raise ScheduleDomainError(f"full_logprob needs sigma > 0, got {sigma!r}")
    dim = np.shape(x_next)[-1] if np.ndim(x_next) > 0 else 1
    sq = _squared_distance(np.atleast_1d(x_next), np.atleast_1d(mu))
    return -sq / (2.0 * sigma * sigma) - dim * (math.log(sigma) + _LOG_SQRT_2PI)

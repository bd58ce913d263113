"""
Velocity fields: exact oracles for toy data and a trainable numpy MLP.
"""

from .base import VelocityField, eval_velocity
from .oracles import DeltaOracle, GaussianOracle
from .mlp import MlpVelocityField

__all__ = [
    "VelocityField",
    "eval_velocity",
    "DeltaOracle",
    "GaussianOracle",
    "MlpVelocityField",
]

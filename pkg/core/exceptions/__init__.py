"""
Exception hierarchy for flowcps.

Every error raised on purpose by the package derives from FlowCpsError. Most
subclasses also derive from the builtin they specialise, so callers that only
know about ValueError / ArithmeticError keep working.
"""

from typing import Any, Dict, Optional


class FlowCpsError(Exception):
    """Base class for all flowcps errors"""


class ConfigurationError(FlowCpsError, ValueError):
    """Invalid experiment configuration or command-line usage"""


class OutputConflictError(FlowCpsError):
    """Output directory exists, is not empty and --force was not given"""


class ScheduleDomainError(FlowCpsError, ValueError):
    """Time grid or noise rule evaluated outside its domain"""


class SingularityError(FlowCpsError, ArithmeticError):
    """A formula was evaluated at its singular point (t=0 or t=1)"""


class RadicandError(FlowCpsError, ValueError):
    """A square-root coefficient would have a negative radicand"""

    def __init__(self, t: float, dt: float, sigma: float, message: Optional[str] = None):
        self.t = t
        self.dt = dt
        self.sigma = sigma
        super().__init__(
            message or f"Negative radicand at t={t!r}, dt={dt!r}, sigma={sigma!r}"
        )


class UnsupportedVelocityError(FlowCpsError, TypeError):
    """Operation requires a different velocity field variant"""


class TrainingDivergenceError(FlowCpsError, RuntimeError):
    """Training loss became non-finite"""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"Training diverged at step {step}: loss={loss!r}")


class RolloutStepError(FlowCpsError):
    """A step rule failed inside a rollout; the cause is chained"""

    def __init__(self, step_index: int, t: float, dt: float, cause: Exception):
        self.step_index = step_index
        self.t = t
        self.dt = dt
        super().__init__(f"Step {step_index} (t={t!r}, dt={dt!r}) failed: {cause}")


class ObjectiveError(FlowCpsError, RuntimeError):
    """GRPO objective or gradient became non-finite"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        self.partial = None  # partial run results, attached by the caller when available
        details = ", ".join(f"{k}={v!r}" for k, v in sorted(self.diagnostics.items()))
        super().__init__(f"{message} ({details})" if details else message)


__all__ = [
    "FlowCpsError",
    "ConfigurationError",
    "OutputConflictError",
    "ScheduleDomainError",
    "SingularityError",
    "RadicandError",
    "UnsupportedVelocityError",
    "TrainingDivergenceError",
    "RolloutStepError",
    "ObjectiveError",
]

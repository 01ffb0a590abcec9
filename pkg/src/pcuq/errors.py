"""Exception types shared across the package.

Argument, shape, and precondition violations raise plain ``ValueError``;
the classes here cover numerical failures that callers may want to catch
and recover from (step halving, diagnostics) plus configuration errors
surfaced by the command-line layer.
"""


class PcuqError(Exception):
    """Base class for package-specific failures."""


class ModelEvaluationError(PcuqError):
    """A forward map or density produced a non-finite value."""


class IntegrationError(ModelEvaluationError):
    """ODE/SDE state became non-finite; carries the failure time."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class DivergenceError(PcuqError):
    """A particle update produced non-finite coordinates.

    Carries the step size in use and the last finite ensemble so callers
    can retry with a smaller step or inspect the blow-up.
    """

    def __init__(self, message, step=None, last_ensemble=None):
        super().__init__(message)
        self.step = step
        self.last_ensemble = last_ensemble


class FixedPointError(PcuqError):
    """Damped fixed-point iteration failed to converge; keeps residuals."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class ConfigError(PcuqError):
    """Invalid run configuration; message names the offending field path."""


class TuningWarning(UserWarning):
    """An MCMC chain shows pathological acceptance behaviour."""

"""Exception hierarchy shared across the package.

Two families matter for the CLI exit-code contract: usage/configuration
problems (exit code 1) and numerical failures (exit code 2).
"""


class IgafieldError(Exception):
    """Base class for all package errors."""


class ConfigError(IgafieldError):
    """Invalid configuration value or incompatible artifacts (exit code 1)."""


class NumericalError(IgafieldError):
    """Base for failures of the numerics themselves (exit code 2)."""


class GeometryError(NumericalError):
    """Infeasible parameters or an invalid geometry, names the violated constraint."""


class AssemblyError(NumericalError):
    """Assembly failed, e.g. a singular Jacobian at a quadrature point."""


class SolverError(NumericalError):
    """Linear or nonlinear solve failed to meet its tolerance."""


class TrainingDivergedError(NumericalError):
    """Network training diverged; carries the loss history so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history

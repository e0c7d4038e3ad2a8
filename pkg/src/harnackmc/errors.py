"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, coupling, solver or experiment configuration."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class NumericalFailure(ArithmeticError):
    """Quadrature, root finding or time stepping did not produce a finite result."""

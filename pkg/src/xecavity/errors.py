"""Exception types raised across the package."""


class ValidationError(ValueError):
    """Invalid input data or parameters.

    ``location`` names the offending field (and line, for file input) so the
    message can point at it directly.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class CatalogError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class TraceFormatError(ValidationError):
    pass


class ConvergenceError(RuntimeError):
    """An iterative solve stopped without meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None, context=None):
        self.residual = residual
        self.iterations = iterations
        self.context = context
        parts = [message]
        if residual is not None:
            parts.append(f"last residual {residual:.3e}")
        if iterations is not None:
            parts.append(f"after {iterations} iterations")
        if context:
            parts.append(str(context))
        super().__init__("; ".join(parts))


class QuadratureError(ConvergenceError):
    pass


class FitError(ConvergenceError):
    pass

"""Exception types shared across the package."""


class InvalidSpecError(ValueError):
    """A configuration or argument violates its documented preconditions."""


class UnsupportedQueryError(LookupError):
    """The requested quantity is not defined for this object."""


class ShapeError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """A loss or gradient became non-finite during optimisation."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        extra = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({extra})"


class ContractViolation(AssertionError):
    pass

"""Exception types shared across the package."""


class AlascaError(Exception):
    pass


class DimensionError(AlascaError, ValueError):
    """Tensor shapes do not line up."""


class ContractError(AlascaError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(AlascaError, ArithmeticError):
    """NaN/Inf input or a diverged computation."""

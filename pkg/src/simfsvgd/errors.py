"""Exception types shared across the package."""


class NumericFailure(ArithmeticError):
    """A numerical routine produced non-finite values or could not factorize a matrix."""

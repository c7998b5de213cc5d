"""Function-space particle inference with simulator-informed priors."""

__version__ = "0.1.0"

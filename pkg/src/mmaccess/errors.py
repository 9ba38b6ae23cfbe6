"""Error taxonomy shared across the package.

Three categories: bad scenario/parameter values (ConfigurationError), misuse of
an API such as shape or length mismatches (UsageError), and numeric breakdown
during iterative processing (NumericsError).
"""


class ConfigurationError(ValueError):
    """A scenario or codec parameter is out of its allowed range."""


class UsageError(ValueError):
    """Inputs are structurally inconsistent (shapes, lengths, indices)."""


class NumericsError(RuntimeError):
    """Non-finite or degenerate values encountered during iteration."""

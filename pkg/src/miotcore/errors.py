"""Shared exception types, mapped to CLI exit codes in one place."""


class ConfigurationError(Exception):
    """Invalid or incomplete scenario configuration."""


class TraceFormatError(Exception):
    """A trace file could not be parsed."""


class OverloadError(Exception):
    """A server is driven at utilization >= 1.

    min_capacity_multiplier is the infimum of capacity multipliers that
    restore stability; any strictly larger multiplier gives rho < 1.
    """

    def __init__(self, message, min_capacity_multiplier=None):
        super().__init__(message)
        self.min_capacity_multiplier = min_capacity_multiplier


class NumericalError(Exception):
    """A numerical routine left its validity region (bad bracket, pole)."""

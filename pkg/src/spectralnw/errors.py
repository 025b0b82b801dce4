"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError and CapacityError are
usage/configuration problems (exit 2), DataError covers malformed input
files (exit 3), NumericError and SamplerProtocolError are runtime
failures (exit 4).
"""


class ConfigError(ValueError):
    """Invalid configuration or command usage."""


class CapacityError(ValueError):
    """A problem size exceeds an exact-enumeration bound."""


class DataError(ValueError):
    """Malformed or unusable input data."""


class DegenerateFeatureError(DataError):
    """A feature column cannot be standardized (zero variance)."""


class SamplerProtocolError(RuntimeError):
    """The external sampler returned an unusable reply (after one retry)."""


class NumericError(RuntimeError):
    """A non-finite value appeared where a finite one is required."""

"""Exception taxonomy shared across the pipeline.

The CLI maps each class to a distinct exit code (see cli.EXIT_CODES), so
library code should raise the most specific type that applies.
"""


class RoughsenseError(Exception):
    """Base class for all library errors."""


class ConfigError(RoughsenseError):
    """Mismatched or invalid configuration (buffer size, sample rate, manifest schema, ...)."""


class DataError(RoughsenseError):
    """Invalid data content: non-finite samples, corrupt files, wrong channel counts."""


class NumericError(RoughsenseError):
    """Numerical failure during computation (non-finite activations, NaN loss)."""


class NetworkError(RoughsenseError):
    """Socket-level failure, reported with endpoint context."""


class ModelFormatError(DataError):
    """Model file is corrupt: bad magic, truncated payload, checksum mismatch."""


class ModelVersionError(DataError):
    """Model file uses an unsupported container version."""


class FingerprintError(ConfigError):
    """Model feature-layout fingerprint does not match the runtime DSP configuration."""


class PacketError(DataError):
    """Malformed wire packet; counted and dropped by the receiver, never fatal."""

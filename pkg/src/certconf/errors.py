"""Exception taxonomy and process exit codes shared by the library and the CLI."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_GUARD = 4
EXIT_SOUNDNESS = 5


class CertconfError(Exception):
    """Base class for all certconf errors."""

    exit_code = 1


class InvalidInputError(CertconfError):
    """Malformed data: non-finite features, out-of-range class index, shape mismatch."""

    exit_code = EXIT_CONFIG


class InvalidConfigError(CertconfError):
    """Unusable configuration: zero partitions, alpha outside (0, 1), unknown mode."""

    exit_code = EXIT_CONFIG


class UnsupportedModeError(InvalidConfigError):
    """Operation undefined for the configured score mode (e.g. training-edit
    certificates with a probability-based score)."""


class InvalidRadiusError(InvalidConfigError):
    """Threat radius outside the certifiable range (training radius > classifier count)."""


class InfeasibleCalibrationError(CertconfError):
    """A calibration partition is too small for the finite-sample corrected quantile.

    Carries the offending partition index and its size when known, so callers
    can print an actionable diagnostic.
    """

    exit_code = EXIT_INFEASIBLE

    def __init__(self, message: str, partition: int | None = None, size: int | None = None):
        super().__init__(message)
        self.partition = partition
        self.size = size


class InstanceTooLargeError(CertconfError):
    """Oracle guard: the instance exceeds the exhaustive-search caps."""

    exit_code = EXIT_GUARD

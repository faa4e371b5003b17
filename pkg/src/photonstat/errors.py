"""Exception hierarchy shared by every module.

The CLI maps these onto stable exit codes (see :mod:`photonstat.cli`).
"""


class PhotonstatError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PhotonstatError, ValueError):
    """Invalid configuration, parameters or preconditions."""


class FormatError(PhotonstatError):
    """Malformed file header or record layout."""


class IntegrityError(PhotonstatError):
    """Data that violates a stream invariant (ordering, channel range, ...)."""


class EstimationError(PhotonstatError):
    """An estimator could not produce a result.

    ``diagnostics`` carries whatever the failing routine knew at the time
    (last iterate, residuals, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class UndefinedMetricError(EstimationError):
    """A metric is undefined for the given distribution (e.g. zero mean)."""

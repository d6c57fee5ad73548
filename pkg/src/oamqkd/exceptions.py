"""Exception hierarchy for the oamqkd package.

Everything raised on purpose derives from OamQkdError so callers can
catch one base class.  The three branches map onto the three ways a run
can go wrong: the user handed us bad numbers (ConfigurationError and its
subclasses), the physics was asked to do something outside its domain
(DomainError and subclasses), or an internal consistency check tripped
(InvariantError, which is always a bug).
"""


class OamQkdError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OamQkdError):
    """User-supplied configuration is invalid (bad value, bad file, bad combination)."""


class ConfigFileError(ConfigurationError):
    """A configuration file could not be parsed or failed validation.

    Carries the offending field path when one is known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(OamQkdError):
    """A quantity is outside the physical or mathematical domain of an operation."""


class ModeSetError(DomainError):
    """An OAM mode index falls outside the allowed mode set."""


class NormalizationError(DomainError):
    """A state vector or probability distribution is too far from normalized."""


class DecoyDataError(DomainError):
    """Decoy-state estimation was fed unusable statistics (e.g. an undefined error rate)."""


class InvariantError(OamQkdError):
    """An internal invariant was violated.  Indicates a bug, not bad input."""

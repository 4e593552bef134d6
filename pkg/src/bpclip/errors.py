"""Exception taxonomy shared across modules."""


class BpclipError(Exception):
    pass


class InputError(BpclipError):
    """Runtime input violates an operation's precondition."""


class ConfigurationError(BpclipError):
    """Model structure, parameters, and configuration disagree."""


class NumericDomainError(BpclipError):
    """Value outside the numeric domain of an operation (e.g. zero norm)."""


class ManifestError(BpclipError):
    """Dataset manifest failed to load or validate."""


class SplitError(BpclipError):
    """Requested split is impossible for the given manifest."""


class DegenerateRangeError(BpclipError):
    """MOS column has no spread; normalization undefined."""


class TextBankError(BpclipError):
    """Text embedding bank failed to load or validate."""


class MetricUndefinedError(BpclipError):
    """Correlation metric undefined (too few samples or zero variance)."""


class TrainingDivergedError(BpclipError):
    """Loss became non-finite; training aborted."""

"""Exception hierarchy shared by all wismc modules."""


class WismcError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class EmptySeries(WismcError):
    pass


class UnsortedInput(WismcError):
    pass


class TooShort(WismcError):
    pass


class DegenerateDistribution(WismcError):
    pass


class DegenerateIndex(WismcError):
    pass


class UnreachableBackwardState(WismcError):
    pass


class InsufficientData(WismcError):
    pass


class GridMismatch(WismcError):
    pass


class DegenerateVariance(WismcError):
    pass


class SymbolMismatch(WismcError):
    pass


class ArtifactMismatch(WismcError):
    """Artifacts built from different configurations were mixed."""


class InputError(WismcError, ValueError):
    """Unreadable input file or invalid configuration."""

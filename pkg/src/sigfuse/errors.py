"""Exception and warning types shared across the package."""


class SigfuseError(Exception):
    """Base class for all errors raised by sigfuse."""


class InfeasibleMatrix(SigfuseError):
    """The cost matrix admits no finite perfect assignment."""


class InsufficientData(SigfuseError):
    """Too few users or images to train the embedding network."""


class TooFewReferences(SigfuseError):
    """A user template needs at least two reference signatures."""


class ZeroDelta(SigfuseError):
    """User normalization divisor is zero."""


class InsufficientGenuines(SigfuseError):
    """A user has no genuine signature left for testing."""


class EmptyScoreList(SigfuseError):
    """EER computation received an empty score list."""


class DegenerateUser(SigfuseError):
    """A user's own EER threshold cannot be used as a divisor."""


class MissingFile(SigfuseError):
    """A file referenced by a dataset manifest does not exist."""


class MalformedManifest(SigfuseError):
    """A dataset manifest could not be parsed."""


class DegenerateWarning(UserWarning):
    """Input was degenerate; a conventional value was substituted."""

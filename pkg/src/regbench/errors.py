"""Exception types shared across the registration engine."""

from __future__ import annotations


class RegistrationError(Exception):
    """Base class for every error raised by this package."""


class DegeneratePoint(RegistrationError):
    """A homography sends the point to infinity."""


class DegenerateConfiguration(RegistrationError):
    """Point configuration does not determine a unique model."""


class InsufficientCorrespondences(RegistrationError):
    """Fewer correspondences than the model's minimal sample."""


class BelowInlierGate(RegistrationError):
    """Best consensus set is smaller than the minimum inlier count.

    This is the pair-level registration failure: the pair produced no
    valid geometric output.
    """

    def __init__(self, message: str, best_inliers: int = 0):
        super().__init__(message)
        self.best_inliers = best_inliers


class ExternalMatcherFailure(RegistrationError):
    """External adapter exited, timed out, replied ERR, or sent malformed output."""


class UnsupportedBandCount(RegistrationError):
    pass


class IoError(RegistrationError, OSError):
    """An input file (image, tie points, manifest) could not be read."""


class NoEvaluablePoints(RegistrationError):
    """Every pair failed (or carried no supervision); error statistics are undefined.

    The partially filled summary is attached as ``summary``.
    """

    def __init__(self, message: str, summary=None):
        super().__init__(message)
        self.summary = summary


class EmptyAxis(RegistrationError):
    pass


class UsageError(RegistrationError):
    """Bad command-line or config-file input."""

"""Exception types shared across the package."""

from __future__ import annotations


class HdqkdError(Exception):
    """Base class for domain errors raised by this package."""


class InsufficientStatistics(HdqkdError):
    """A bound needed for the key length has no support (e.g. zero single-photon X events)."""


class NoPositiveKey(HdqkdError):
    """No point in the searched parameter range yields a positive key."""


class NoCrossover(HdqkdError):
    """One protocol dominates the other over the whole attenuation range.

    ``leader`` is the dimension ahead wherever the rates differ (None if they never do).
    """

    def __init__(self, message: str, leader: int | None = None):
        super().__init__(message)
        self.leader = leader


class AcquisitionFailed(HdqkdError):
    """The cross-correlation peak is not significant enough to trust."""


class PeakLost(HdqkdError):
    """The arrival-phase histogram no longer shows a usable peak."""


class SlipUnrecovered(HdqkdError):
    """No offset within the scan range brings the QBER back below threshold."""


class LockLost(HdqkdError):
    """The phase-lock QBER stayed above the escape threshold for too long."""


class SeriesTooShort(HdqkdError):
    """Too few samples to evaluate the requested averaging time."""


class Unsynchronized(HdqkdError):
    """Detection tags could not be mapped onto sent symbol indices."""

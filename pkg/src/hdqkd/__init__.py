"""Finite-key analysis, channel model, event simulation and stabilization for
high-dimensional time-bin QKD."""

from .channel import ChannelParams, expected_block, key_rate
from .errors import HdqkdError
from .security import ObservedBlock, ProtocolParams, SecurityResult, secret_key_length

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "HdqkdError",
    "ObservedBlock",
    "ProtocolParams",
    "SecurityResult",
    "expected_block",
    "key_rate",
    "secret_key_length",
]

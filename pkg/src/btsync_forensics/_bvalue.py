"""Bencode value types shared by the pure-Python and compiled decoders.

Decoded values subclass the matching builtin (bytes, int, list, dict) so
consumers can treat them as plain Python data; each also remembers the
half-open byte range it was decoded from in ``span``.
"""
from dataclasses import dataclass

from .errors import ForensicError

MAX_DEPTH = 64
INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1


class BencodeError(ForensicError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class Truncated(BencodeError):
    """Input ended in the middle of a value."""


class Malformed(BencodeError):
    """Grammar violation."""


class DepthExceeded(BencodeError):
    """Nesting deeper than MAX_DEPTH."""


class BBytes(bytes):
    span = None

    def __repr__(self):
        return f"BBytes({bytes.__repr__(self)})"


class BInt(int):
    span = None

    def __repr__(self):
        return f"BInt({int.__repr__(self)})"


class BList(list):
    span = None


class BDict(dict):
    span = None


@dataclass(frozen=True)
class DecodeWarning:
    message: str
    offset: int
    first_offset: int = -1


@dataclass
class DecodeResult:
    value: object
    consumed: int
    trailing: int
    warnings: list

"""Identifier layer: base32 IDs, master keys, sync links, share IDs, packed addresses."""
import base64
import enum
import hashlib
import ipaddress
import struct
from dataclasses import dataclass, field
from urllib.parse import parse_qsl, quote

from .errors import ForensicError

ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ234567"
_ALPHABET_SET = frozenset(ALPHABET)
# Symbol counts whose bit total leaves >= 5 stranded bits.
_BAD_LENGTH_REMAINDERS = frozenset({1, 3, 6})


class KeyCodecError(ForensicError):
    pass


class InvalidSymbol(KeyCodecError):
    def __init__(self, symbol, position):
        super().__init__(f"invalid base32 symbol {symbol!r} at position {position}")
        self.position = position


class InvalidLength(KeyCodecError):
    pass


class BadLength(KeyCodecError):
    pass


class BadAlphabet(KeyCodecError):
    pass


class UnknownType(KeyCodecError):
    pass


class NoParams(KeyCodecError):
    pass


class BadBase32Param(KeyCodecError):
    def __init__(self, param, reason):
        super().__init__(f"parameter {param!r}: {reason}")
        self.param = param


class BadParam(KeyCodecError):
    def __init__(self, param, reason):
        super().__init__(f"parameter {param!r}: {reason}")
        self.param = param


def base32_encode(data):
    """Unpadded RFC 4648 base32 (A-Z, 2-7)."""
    return base64.b32encode(bytes(data)).decode("ascii").rstrip("=")


def base32_decode(text):
    """Inverse of base32_encode; padding is neither required nor accepted."""
    for pos, ch in enumerate(text):
        if ch not in _ALPHABET_SET:
            raise InvalidSymbol(ch, pos)
    if len(text) % 8 in _BAD_LENGTH_REMAINDERS:
        raise InvalidLength(f"{len(text)} symbols cannot encode a whole number of bytes")
    padded = text + "=" * (-len(text) % 8)
    return base64.b32decode(padded)


def is_hex_id(text, widths=(20,)):
    if len(text) not in tuple(2 * w for w in widths):
        return False
    try:
        bytes.fromhex(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class PeerId:
    raw: bytes

    def __post_init__(self):
        if len(self.raw) != 20:
            raise BadLength(f"peer ID must be 20 bytes, got {len(self.raw)}")

    @classmethod
    def from_hex(cls, text):
        return cls(bytes.fromhex(text))

    @classmethod
    def from_b32(cls, text):
        return cls(base32_decode(text))

    @property
    def hex(self):
        return self.raw.hex().upper()

    @property
    def b32(self):
        return base32_encode(self.raw)

    def __str__(self):
        return self.hex


class ShareWidth(enum.Enum):
    W20 = 20
    W32 = 32


@dataclass(frozen=True)
class ShareId:
    raw: bytes

    def __post_init__(self):
        if len(self.raw) not in (20, 32):
            raise BadLength(f"share ID must be 20 or 32 bytes, got {len(self.raw)}")

    @property
    def width(self):
        return ShareWidth(len(self.raw))

    @property
    def hex(self):
        return self.raw.hex().upper()

    def __str__(self):
        return self.hex


class Permission(enum.Enum):
    ReadWrite = "ReadWrite"
    ReadOnly = "ReadOnly"
    EncryptedNode = "EncryptedNode"
    LegacyReadOnly = "LegacyReadOnly"
    TimeLimited = "TimeLimited"


KEY_TYPES = {
    "A": (Permission.ReadWrite, "standard read-write key"),
    "B": (Permission.ReadOnly, "read-only key derived from an A key"),
    "C": (Permission.TimeLimited, "time-limited read-only one-time key"),
    "D": (Permission.ReadWrite, "read-write key able to seed encrypted nodes"),
    "E": (Permission.ReadOnly, "read-only key able to decrypt data from encrypted nodes"),
    "F": (Permission.EncryptedNode, "encrypted-node key; stores and seeds without decrypting"),
    "R": (Permission.LegacyReadOnly, "legacy pre-1.0 read-only key"),
}


@dataclass(frozen=True)
class MasterKey:
    key_type: str
    body: str
    extra: str | None
    permission: Permission

    @property
    def text(self):
        return self.key_type + self.body + (self.extra or "")

    @property
    def description(self):
        return KEY_TYPES[self.key_type][1]


def classify_key(key):
    if len(key) not in (33, 65):
        raise BadLength(f"master key must be 33 or 65 symbols, got {len(key)}")
    for pos, ch in enumerate(key[1:], start=1):
        if ch not in _ALPHABET_SET:
            raise BadAlphabet(f"invalid key symbol {ch!r} at position {pos}")
    key_type = key[0]
    if key_type not in KEY_TYPES:
        raise UnknownType(f"unknown key type {key_type!r}")
    return MasterKey(
        key_type=key_type,
        body=key[1:33],
        extra=key[33:] if len(key) == 65 else None,
        permission=KEY_TYPES[key_type][0],
    )


def share_id_of_key(key):
    """SHA-1 over the ASCII text of the full key, type symbol included."""
    classify_key(key)
    return ShareId(hashlib.sha1(key.encode("ascii")).digest())


@dataclass(frozen=True)
class NetAddr:
    ip: str
    port: int

    def __post_init__(self):
        ipaddress.IPv4Address(self.ip)
        if not 0 <= self.port <= 0xFFFF:
            raise ValueError(f"port out of range: {self.port}")

    def pack(self):
        return encode_netaddr(self)

    def __str__(self):
        return f"{self.ip}:{self.port}"

    @classmethod
    def parse(cls, text):
        ip, _, port = text.rpartition(":")
        return cls(ip, int(port))


def decode_netaddr(raw):
    """Six bytes in network order: IPv4 address then port."""
    raw = bytes(raw)
    if len(raw) != 6:
        raise BadLength(f"packed address must be 6 bytes, got {len(raw)}")
    ip, port = struct.unpack(">4sH", raw)
    return NetAddr(str(ipaddress.IPv4Address(ip)), port)


def encode_netaddr(addr):
    return ipaddress.IPv4Address(addr.ip).packed + struct.pack(">H", addr.port)


_LINK_PARAMS = ("f", "sz", "s", "i", "e", "p")


@dataclass
class SyncLink:
    folder_name: str | None = None
    size_approx: str | None = None
    folder_id: bytes | None = None
    temp_key: str | None = None
    expiry: int | None = None
    peer_id: PeerId | None = None
    extras: list = field(default_factory=list)
    base: str = ""

    def to_params(self):
        params = []
        if self.folder_name is not None:
            params.append(("f", self.folder_name))
        if self.size_approx is not None:
            params.append(("sz", self.size_approx))
        if self.folder_id is not None:
            params.append(("s", base32_encode(self.folder_id)))
        if self.temp_key is not None:
            params.append(("i", self.temp_key))
        if self.expiry is not None:
            params.append(("e", str(self.expiry)))
        if self.peer_id is not None:
            params.append(("p", self.peer_id.b32))
        return params + list(self.extras)

    def to_url(self):
        query = "&".join(f"{k}={quote(v, safe='')}" for k, v in self.to_params())
        return f"{self.base}#{query}"


def _b32_param(name, value, size=None):
    try:
        raw = base32_decode(value)
    except KeyCodecError as exc:
        raise BadBase32Param(name, str(exc)) from None
    if size is not None and len(raw) != size:
        raise BadBase32Param(name, f"decodes to {len(raw)} bytes, expected {size}")
    return raw


def parse_sync_link(url):
    cut = min((i for i in (url.find("#"), url.find("?")) if i >= 0), default=-1)
    if cut < 0 or cut == len(url) - 1:
        raise NoParams("link has no parameter section")
    link = SyncLink(base=url[:cut])
    for key, value in parse_qsl(url[cut + 1:], keep_blank_values=True):
        if key not in _LINK_PARAMS or _link_field_set(link, key):
            link.extras.append((key, value))
        elif key == "f":
            link.folder_name = value
        elif key == "sz":
            link.size_approx = value
        elif key == "s":
            link.folder_id = _b32_param("s", value, 20)
        elif key == "i":
            _b32_param("i", value)
            link.temp_key = value
        elif key == "e":
            if not value.isdigit():
                raise BadParam("e", f"expiry {value!r} is not a non-negative integer")
            link.expiry = int(value)
        elif key == "p":
            link.peer_id = PeerId(_b32_param("p", value, 20))
    return link


def _link_field_set(link, key):
    attr = {"f": "folder_name", "sz": "size_approx", "s": "folder_id",
            "i": "temp_key", "e": "expiry", "p": "peer_id"}[key]
    return getattr(link, attr) is not None

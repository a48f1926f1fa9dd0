"""Lossless bencode decoding and canonical encoding.

The metadata files (settings.dat, sync.dat, history.dat, ...) and the
discovery datagrams all carry bencoded dictionaries. Decoding is lenient
about dict key order and keeps the first of duplicated keys (with a
warning); encoding always emits keys in raw byte order.

The decoder kernel is compiled with Cython when available. Set
``BTSYNC_FORENSICS_PURE=1`` to force the pure-Python implementation.
"""
import os

from . import _bencode_py
from ._bvalue import (  # noqa: F401  (re-exported)
    MAX_DEPTH,
    INT64_MAX,
    INT64_MIN,
    BBytes,
    BDict,
    BencodeError,
    BInt,
    BList,
    DecodeResult,
    DecodeWarning,
    DepthExceeded,
    Malformed,
    Truncated,
)

_decode_py = _bencode_py.decode_value
_decode_native = None
if not os.environ.get("BTSYNC_FORENSICS_PURE"):
    try:
        from ._speedups import decode_value as _decode_native
    except ImportError:  # extension not built
        _decode_native = None

BACKEND = "cython" if _decode_native is not None else "python"
_decode_impl = _decode_native or _decode_py


def decode(buffer, start=0, *, max_depth=MAX_DEPTH):
    """Decode the first complete value in ``buffer`` starting at ``start``.

    Bytes after the value are reported in ``DecodeResult.trailing``, they
    are not an error.
    """
    buffer = bytes(buffer)
    if start >= len(buffer):
        raise Truncated("unexpected end of input", len(buffer))
    value, end, warnings = _decode_impl(buffer, start, max_depth)
    return DecodeResult(value, end - start, len(buffer) - end, warnings)


def decode_with(backend, buffer, start=0, *, max_depth=MAX_DEPTH):
    """Decode with an explicit backend ("python" or "cython"); used by tests and benchmarks."""
    if backend == "python":
        impl = _decode_py
    elif backend == "cython":
        if _decode_native is None:
            raise RuntimeError("compiled extension is not available")
        impl = _decode_native
    else:
        raise ValueError(backend)
    buffer = bytes(buffer)
    if start >= len(buffer):
        raise Truncated("unexpected end of input", len(buffer))
    value, end, warnings = impl(buffer, start, max_depth)
    return DecodeResult(value, end - start, len(buffer) - end, warnings)


def loads(buffer):
    """Decode and return only the value."""
    return decode(buffer).value


def encode(value):
    """Canonical encoding; ``str`` is accepted and encoded as UTF-8."""
    out = []
    _encode(value, out)
    return b"".join(out)


def _encode(value, out):
    if isinstance(value, (bytes, bytearray, memoryview)):
        value = bytes(value)
        out.append(b"%d:" % len(value))
        out.append(value)
    elif isinstance(value, str):
        _encode(value.encode("utf-8"), out)
    elif isinstance(value, bool):
        raise TypeError("bool is not a bencode type")
    elif isinstance(value, int):
        if value < INT64_MIN or value > INT64_MAX:
            raise ValueError(f"integer {value} outside signed 64-bit range")
        out.append(b"i%de" % value)
    elif isinstance(value, (list, tuple)):
        out.append(b"l")
        for item in value:
            _encode(item, out)
        out.append(b"e")
    elif isinstance(value, dict):
        items = []
        for key, item in value.items():
            if isinstance(key, str):
                key = key.encode("utf-8")
            elif not isinstance(key, bytes):
                raise TypeError(f"dict key must be bytes or str, not {type(key).__name__}")
            items.append((bytes(key), item))
        items.sort(key=lambda kv: kv[0])
        out.append(b"d")
        for key, item in items:
            _encode(key, out)
            _encode(item, out)
        out.append(b"e")
    else:
        raise TypeError(f"cannot bencode {type(value).__name__}")


def get_path(root, path):
    """Follow dict keys (bytes or str) and list indices; None when absent."""
    node = root
    for step in path:
        if isinstance(node, dict):
            if isinstance(step, str):
                step = step.encode("utf-8")
            if not isinstance(step, bytes) or step not in node:
                return None
            node = node[step]
        elif isinstance(node, list):
            if not isinstance(step, int) or isinstance(step, bool) or not -len(node) <= step < len(node):
                return None
            node = node[step]
        else:
            return None
    return node


def text(value, default=None):
    """Best-effort text view of a byte string (invalid UTF-8 is escaped, not lost)."""
    if isinstance(value, bytes):
        return value.decode("utf-8", "surrogateescape")
    if isinstance(value, str):
        return value
    return default


def _printable(raw):
    try:
        s = raw.decode("utf-8")
    except UnicodeDecodeError:
        return None
    if all(ch.isprintable() or ch in "\t\r\n" for ch in s):
        return s
    return None


def to_jsonable(value):
    """JSON view of a value: text byte strings stay strings, binary ones become {"hex": ...}."""
    if isinstance(value, bytes):
        s = _printable(value)
        return s if s is not None else {"hex": value.hex()}
    if isinstance(value, int):
        return int(value)
    if isinstance(value, list):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        out = {}
        for key, item in value.items():
            name = _printable(key)
            out[name if name is not None else "0x" + key.hex()] = to_jsonable(item)
        return out
    raise TypeError(type(value).__name__)

"""Pure-Python bencode decoder.

Reference behaviour for the compiled kernel in ``_speedups.pyx``; the two
must agree on values, spans, warnings and error types/offsets.
"""
from ._bvalue import (
    INT64_MAX,
    INT64_MIN,
    BBytes,
    BDict,
    BInt,
    BList,
    DecodeWarning,
    DepthExceeded,
    Malformed,
    Truncated,
)

_DIGITS = frozenset(b"0123456789")
# Longest accepted length prefix; anything longer cannot fit in memory anyway.
_MAX_LEN_DIGITS = 18


def decode_value(buf, start=0, max_depth=64):
    """Decode one value at ``start``; return ``(value, end, warnings)``."""
    warnings = []
    value, end = _decode(buf, start, 0, max_depth, warnings)
    return value, end, warnings


def _decode(buf, pos, depth, max_depth, warnings):
    n = len(buf)
    if pos >= n:
        raise Truncated("unexpected end of input", n)
    c = buf[pos]
    if c in _DIGITS:
        return _decode_bytes(buf, pos)
    if c == 0x69:  # i
        return _decode_int(buf, pos)
    if c == 0x6C or c == 0x64:  # l, d
        if depth + 1 > max_depth:
            raise DepthExceeded(f"nesting deeper than {max_depth}", pos)
        if c == 0x6C:
            return _decode_list(buf, pos, depth + 1, max_depth, warnings)
        return _decode_dict(buf, pos, depth + 1, max_depth, warnings)
    raise Malformed(f"unexpected byte 0x{c:02x}", pos)


def _decode_bytes(buf, pos):
    n = len(buf)
    j = pos
    while j < n and buf[j] in _DIGITS:
        j += 1
    if j >= n:
        raise Truncated("unexpected end of input", n)
    if buf[j] != 0x3A:  # :
        raise Malformed("expected ':' after string length", j)
    if j - pos > 1 and buf[pos] == 0x30:
        raise Malformed("leading zero in string length", pos)
    if j - pos > _MAX_LEN_DIGITS:
        raise Malformed("string length too large", pos)
    length = int(buf[pos:j])
    begin = j + 1
    end = begin + length
    if end > n:
        raise Truncated("unexpected end of input", n)
    value = BBytes(buf[begin:end])
    value.span = (pos, end)
    return value, end


def _decode_int(buf, pos):
    n = len(buf)
    j = pos + 1
    negative = False
    if j < n and buf[j] == 0x2D:  # -
        negative = True
        j += 1
    digits_start = j
    while j < n and buf[j] in _DIGITS:
        j += 1
    if j >= n:
        raise Truncated("unexpected end of input", n)
    ndigits = j - digits_start
    if ndigits == 0:
        raise Malformed("integer without digits", pos)
    if buf[j] != 0x65:  # e
        raise Malformed("expected 'e' after integer", j)
    if ndigits > 1 and buf[digits_start] == 0x30:
        raise Malformed("leading zero in integer", pos)
    if negative and ndigits == 1 and buf[digits_start] == 0x30:
        raise Malformed("negative zero", pos)
    if ndigits > 19:
        raise Malformed("integer out of 64-bit range", pos)
    number = int(buf[digits_start:j])
    if negative:
        number = -number
    if number < INT64_MIN or number > INT64_MAX:
        raise Malformed("integer out of 64-bit range", pos)
    value = BInt(number)
    value.span = (pos, j + 1)
    return value, j + 1


def _decode_list(buf, pos, depth, max_depth, warnings):
    n = len(buf)
    items = BList()
    j = pos + 1
    while True:
        if j >= n:
            raise Truncated("unexpected end of input", n)
        if buf[j] == 0x65:
            break
        item, j = _decode(buf, j, depth, max_depth, warnings)
        items.append(item)
    items.span = (pos, j + 1)
    return items, j + 1


def _decode_dict(buf, pos, depth, max_depth, warnings):
    n = len(buf)
    result = BDict()
    j = pos + 1
    while True:
        if j >= n:
            raise Truncated("unexpected end of input", n)
        c = buf[j]
        if c == 0x65:
            break
        if c not in _DIGITS:
            raise Malformed("dict key must be a byte string", j)
        key, j = _decode_bytes(buf, j)
        item, j = _decode(buf, j, depth, max_depth, warnings)
        if key in result:
            first = next(k for k in result if k == key)
            warnings.append(DecodeWarning(
                f"duplicate dict key {bytes(key)!r} ignored", key.span[0], first.span[0]))
            continue
        result[key] = item
    result.span = (pos, j + 1)
    return result, j + 1

# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled bencode decoder; mirrors _bencode_py exactly."""
from cpython.bytes cimport PyBytes_FromStringAndSize

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

cdef enum:
    MAX_LEN_DIGITS = 18


cdef inline bint _isdigit(unsigned char c):
    return 48 <= c <= 57


def decode_value(bytes buf, Py_ssize_t start=0, int max_depth=64):
    warnings = []
    cdef Py_ssize_t end = 0
    value = _decode(buf, <const unsigned char*>buf, len(buf), start, 0, max_depth, warnings, &end)
    return value, end, warnings


cdef object _decode(bytes buf, const unsigned char* p, Py_ssize_t n, Py_ssize_t pos,
                    int depth, int max_depth, list warnings, Py_ssize_t* end):
    if pos >= n:
        raise Truncated("unexpected end of input", n)
    cdef unsigned char c = p[pos]
    if _isdigit(c):
        return _decode_bytes(p, n, pos, end)
    if c == 105:  # i
        return _decode_int(buf, p, n, pos, end)
    if c == 108 or c == 100:  # l, d
        if depth + 1 > max_depth:
            raise DepthExceeded(f"nesting deeper than {max_depth}", pos)
        if c == 108:
            return _decode_list(buf, p, n, pos, depth + 1, max_depth, warnings, end)
        return _decode_dict(buf, p, n, pos, depth + 1, max_depth, warnings, end)
    raise Malformed(f"unexpected byte 0x{c:02x}", pos)


cdef object _decode_bytes(const unsigned char* p, Py_ssize_t n, Py_ssize_t pos, Py_ssize_t* end):
    cdef Py_ssize_t j = pos
    cdef long long length = 0
    while j < n and _isdigit(p[j]):
        j += 1
    if j >= n:
        raise Truncated("unexpected end of input", n)
    if p[j] != 58:
        raise Malformed("expected ':' after string length", j)
    if j - pos > 1 and p[pos] == 48:
        raise Malformed("leading zero in string length", pos)
    if j - pos > MAX_LEN_DIGITS:
        raise Malformed("string length too large", pos)
    cdef Py_ssize_t k
    for k in range(pos, j):
        length = length * 10 + (p[k] - 48)
    cdef Py_ssize_t begin = j + 1
    if length > n - begin:
        raise Truncated("unexpected end of input", n)
    value = BBytes(PyBytes_FromStringAndSize(<const char*>p + begin, <Py_ssize_t>length))
    end[0] = begin + <Py_ssize_t>length
    value.span = (pos, end[0])
    return value


cdef object _decode_int(bytes buf, const unsigned char* p, Py_ssize_t n, Py_ssize_t pos, Py_ssize_t* end):
    cdef Py_ssize_t j = pos + 1
    cdef bint negative = False
    if j < n and p[j] == 45:
        negative = True
        j += 1
    cdef Py_ssize_t digits_start = j
    while j < n and _isdigit(p[j]):
        j += 1
    if j >= n:
        raise Truncated("unexpected end of input", n)
    cdef Py_ssize_t ndigits = j - digits_start
    if ndigits == 0:
        raise Malformed("integer without digits", pos)
    if p[j] != 101:
        raise Malformed("expected 'e' after integer", j)
    if ndigits > 1 and p[digits_start] == 48:
        raise Malformed("leading zero in integer", pos)
    if negative and ndigits == 1 and p[digits_start] == 48:
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
    end[0] = j + 1
    return value


cdef object _decode_list(bytes buf, const unsigned char* p, Py_ssize_t n, Py_ssize_t pos,
                         int depth, int max_depth, list warnings, Py_ssize_t* end):
    items = BList()
    cdef Py_ssize_t j = pos + 1
    while True:
        if j >= n:
            raise Truncated("unexpected end of input", n)
        if p[j] == 101:
            break
        items.append(_decode(buf, p, n, j, depth, max_depth, warnings, end))
        j = end[0]
    items.span = (pos, j + 1)
    end[0] = j + 1
    return items


cdef object _decode_dict(bytes buf, const unsigned char* p, Py_ssize_t n, Py_ssize_t pos,
                         int depth, int max_depth, list warnings, Py_ssize_t* end):
    result = BDict()
    cdef Py_ssize_t j = pos + 1
    cdef unsigned char c
    while True:
        if j >= n:
            raise Truncated("unexpected end of input", n)
        c = p[j]
        if c == 101:
            break
        if not _isdigit(c):
            raise Malformed("dict key must be a byte string", j)
        key = _decode_bytes(p, n, j, end)
        j = end[0]
        item = _decode(buf, p, n, j, depth, max_depth, warnings, end)
        j = end[0]
        if key in result:
            first = next(k for k in result if k == key)
            warnings.append(DecodeWarning(
                f"duplicate dict key {bytes(key)!r} ignored", key.span[0], first.span[0]))
            continue
        result[key] = item
    result.span = (pos, j + 1)
    end[0] = j + 1
    return result

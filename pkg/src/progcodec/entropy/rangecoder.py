"""Integer range coder over 16-bit quantized CDF tables.

The coder keeps a 64-bit ``low`` (33 bits used, carry propagated through a
cached byte) and a 32-bit ``range`` renormalized a byte at a time. Each
table row is a strictly increasing CDF whose last entry is ``TOTAL``; the
last symbol of every row is an escape, followed by the value's zigzag code
as two raw 16-bit chunks.

Symbols are passed together with a row index per symbol, so encoder and
decoder only have to agree on the tables and the index sequence.
"""

from __future__ import annotations

import numpy as np
from numba import njit

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
RAW_BITS = 32

# decoder status codes
_OK = 0
_BAD_VALUE = -2
_OVERREAD = -3
_BAD_RAW = -1


class RangeCoderError(ValueError):
    pass


@njit(cache=True)
def _shift_low(st, out):
    # st = [low, cache, cache_size, pos, skip_first]
    low = st[0]
    if low < 0xFF000000 or low > 0xFFFFFFFF:
        carry = low >> 32
        temp = st[1]
        while True:
            if st[4] == 1:
                # the leading byte is always zero: the coded value lies in [0, 1)
                st[4] = 0
            else:
                out[st[3]] = (temp + carry) & 0xFF
                st[3] += 1
            temp = 0xFF
            st[2] -= 1
            if st[2] == 0:
                break
        st[1] = (low >> 24) & 0xFF
    st[2] += 1
    st[0] = (low & 0x00FFFFFF) << 8


@njit(cache=True)
def _put(st, rng, start, size, out):
    r = rng >> PRECISION
    st[0] += r * start
    rng = r * size
    while rng < _TOP:
        rng <<= 8
        _shift_low(st, out)
    return rng


@njit(cache=True)
def _encode(symbols, indexes, cdf, lengths, offsets, out):
    st = np.zeros(5, dtype=np.int64)
    st[2] = 1
    st[4] = 1
    rng = np.int64(_MASK32)
    for i in range(symbols.shape[0]):
        row = indexes[i]
        s = np.int64(symbols[i])
        escape = lengths[row] - 2
        v = s - offsets[row]
        if v < 0 or v >= escape:
            v = escape
        rng = _put(st, rng, np.int64(cdf[row, v]), np.int64(cdf[row, v + 1] - cdf[row, v]), out)
        if v == escape:
            zz = 2 * s if s >= 0 else -2 * s - 1
            if zz > _MASK32:
                return -1
            rng = _put(st, rng, zz >> 16, np.int64(1), out)
            rng = _put(st, rng, zz & 0xFFFF, np.int64(1), out)
    for _ in range(5):
        _shift_low(st, out)
    return st[3]


@njit(cache=True)
def _next_byte(data, pos):
    if pos[0] < data.shape[0]:
        b = np.int64(data[pos[0]])
    else:
        b = np.int64(0)
    pos[0] += 1
    return b


@njit(cache=True)
def _decode(data, indexes, cdf, lengths, offsets, result):
    pos = np.zeros(1, dtype=np.int64)
    code = np.int64(0)
    for _ in range(4):
        code = (code << 8) | _next_byte(data, pos)
    rng = np.int64(_MASK32)
    for i in range(indexes.shape[0]):
        row = indexes[i]
        n = lengths[row]
        r = rng >> PRECISION
        value = code // r
        if value >= TOTAL:
            return _BAD_VALUE
        lo = 0
        hi = n - 1
        # largest v with cdf[row, v] <= value
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cdf[row, mid] <= value:
                lo = mid
            else:
                hi = mid
        start = np.int64(cdf[row, lo])
        code -= r * start
        rng = r * (np.int64(cdf[row, lo + 1]) - start)
        while rng < _TOP:
            code = (code << 8) | _next_byte(data, pos)
            rng <<= 8
        if lo == n - 2:
            zz = np.int64(0)
            for _ in range(2):
                r = rng >> PRECISION
                chunk = code // r
                if chunk >= TOTAL:
                    return _BAD_VALUE
                code -= r * chunk
                rng = r
                while rng < _TOP:
                    code = (code << 8) | _next_byte(data, pos)
                    rng <<= 8
                zz = (zz << 16) | chunk
            result[i] = zz >> 1 if zz % 2 == 0 else -((zz + 1) >> 1)
        else:
            result[i] = offsets[row] + lo
    if pos[0] > data.shape[0]:
        return _OVERREAD
    return _OK


def _as_tables(cdf, lengths, offsets):
    return (
        np.ascontiguousarray(cdf, dtype=np.int32),
        np.ascontiguousarray(lengths, dtype=np.int32),
        np.ascontiguousarray(offsets, dtype=np.int32),
    )


def range_encode(symbols, indexes, cdf, lengths, offsets) -> bytes:
    """Encode integer ``symbols``, each against CDF row ``indexes[i]``."""
    symbols = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
    indexes = np.ascontiguousarray(indexes, dtype=np.int32).ravel()
    if symbols.shape != indexes.shape:
        raise ValueError("symbols and indexes must have the same length")
    cdf, lengths, offsets = _as_tables(cdf, lengths, offsets)
    if indexes.size and (indexes.min() < 0 or indexes.max() >= cdf.shape[0]):
        raise ValueError("row index out of range")
    # a symbol shrinks the range by at most 2**16, an escape adds 32 raw bits
    out = np.empty(7 * symbols.size + 16, dtype=np.uint8)
    n = _encode(symbols, indexes, cdf, lengths, offsets, out)
    if n < 0:
        raise RangeCoderError(f"escaped value does not fit in {RAW_BITS} bits")
    return out[:n].tobytes()


def range_decode(data: bytes, indexes, cdf, lengths, offsets) -> np.ndarray:
    """Inverse of :func:`range_encode`; ``len(indexes)`` symbols are decoded."""
    indexes = np.ascontiguousarray(indexes, dtype=np.int32).ravel()
    cdf, lengths, offsets = _as_tables(cdf, lengths, offsets)
    if indexes.size and (indexes.min() < 0 or indexes.max() >= cdf.shape[0]):
        raise ValueError("row index out of range")
    buf = np.frombuffer(data, dtype=np.uint8)
    result = np.empty(indexes.size, dtype=np.int64)
    status = _decode(buf, indexes, cdf, lengths, offsets, result)
    if status == _BAD_VALUE:
        raise RangeCoderError("corrupted range-coded payload")
    if status == _OVERREAD:
        raise RangeCoderError("range-coded payload is truncated")
    return result


def ideal_bits(symbols, indexes, cdf, lengths, offsets) -> float:
    """Code length in bits implied by the tables (escapes include their raw bits)."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    indexes = np.asarray(indexes, dtype=np.int64).ravel()
    if symbols.size == 0:
        return 0.0
    cdf = np.asarray(cdf, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    escape = lengths[indexes] - 2
    v = symbols - offsets[indexes]
    is_escape = (v < 0) | (v >= escape)
    v = np.where(is_escape, escape, v)
    freq = cdf[indexes, v + 1] - cdf[indexes, v]
    return float(np.sum(PRECISION - np.log2(freq)) + RAW_BITS * np.count_nonzero(is_escape))

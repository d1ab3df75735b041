"""Integer range coder over 16-bit quantized CDFs.

32-bit range, byte-wise renormalization with carry propagation, and a
five-byte flush.  Encoder and decoder are exact inverses as long as they see
the same CDF for every symbol.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
RAW_CHUNK = 16


@dataclass(frozen=True)
class Bitstream:
    data: bytes

    @property
    def bit_length(self):
        return 8 * len(self.data)

    def __len__(self):
        return len(self.data)


def quantize_pmf(pmf):
    """Scale probabilities to integer counts summing to ``2**16`` with every count >= 1.

    Accepts one pmf or a 2D array of pmfs (one per row) and returns the
    matching cumulative tables of length ``n + 1`` starting at 0.  Each entry
    first receives one count; the remaining ``2**16 - n`` counts are split
    proportionally, and leftovers from flooring go to the largest fractional
    remainders (lowest index first on ties).
    """
    p = np.asarray(pmf, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    n = p.shape[1]
    if n > TOTAL:
        raise ValueError(f"{n} symbols exceed the {TOTAL}-count precision")
    if n == 0 or np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("pmf entries must be positive and finite")
    share = p / p.sum(axis=1, keepdims=True) * (TOTAL - n)
    base = np.floor(share)
    counts = base.astype(np.int64) + 1
    leftover = TOTAL - counts.sum(axis=1)
    order = np.argsort(-(share - base), axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(n)[None, :].repeat(len(p), axis=0), axis=1)
    counts += ranks < leftover[:, None]
    cdf = np.zeros((len(p), n + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cdf[:, 1:])
    assert np.all(cdf[:, -1] == TOTAL)
    return cdf[0] if single else cdf


def check_cdf(cdf):
    c = np.asarray(cdf)
    if c.ndim != 1 or len(c) < 2 or c[0] != 0 or c[-1] != TOTAL or np.any(np.diff(c) <= 0):
        raise ValueError("invalid quantized CDF: must rise strictly from 0 to 2**16")


class RangeEncoder:
    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def _shift_low(self):
        low = self._low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self._cache
            while True:
                self._out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self._low = (low & 0x00FFFFFF) << 8

    def encode_interval(self, start, size):
        if size <= 0 or start < 0 or start + size > TOTAL:
            raise ValueError(f"invalid interval [{start}, {start + size}) of {TOTAL}")
        r = self._range >> PRECISION
        self._low += r * start
        self._range = r * size
        while self._range < _TOP:
            self._range <<= 8
            self._shift_low()

    def encode(self, symbol, cdf):
        if not 0 <= symbol < len(cdf) - 1:
            raise ValueError(f"symbol {symbol} outside alphabet of {len(cdf) - 1}")
        start = int(cdf[symbol])
        self.encode_interval(start, int(cdf[symbol + 1]) - start)

    def encode_raw(self, value, bits=32):
        """Uniformly code an unsigned ``bits``-wide integer in 16-bit chunks."""
        if bits % RAW_CHUNK or not 0 <= value < (1 << bits):
            raise ValueError(f"raw value {value} does not fit {bits} bits")
        for shift in range(bits - RAW_CHUNK, -1, -RAW_CHUNK):
            self.encode_interval((value >> shift) & (TOTAL - 1), 1)

    def finish(self):
        for _ in range(5):
            self._shift_low()
        return Bitstream(bytes(self._out))


class RangeDecoder:
    def __init__(self, stream):
        self._data = stream.data if isinstance(stream, Bitstream) else bytes(stream)
        self._pos = 0
        self._range = _MASK32
        self._code = 0
        for _ in range(5):
            self._code = (self._code << 8) | self._next_byte()
        self._code &= _MASK32

    def _next_byte(self):
        if self._pos >= len(self._data):
            raise ValueError("bitstream exhausted before all symbols were decoded")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def _target(self):
        r = self._range >> PRECISION
        return r, min(self._code // r, TOTAL - 1)

    def _consume(self, r, start, size):
        self._code -= r * start
        self._range = r * size
        while self._range < _TOP:
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32
            self._range <<= 8

    def decode(self, cdf):
        r, target = self._target()
        s = bisect_right(cdf, target) - 1
        if not 0 <= s < len(cdf) - 1:
            raise ValueError("corrupt stream: target outside the CDF")
        start = int(cdf[s])
        self._consume(r, start, int(cdf[s + 1]) - start)
        return s

    def decode_raw(self, bits=32):
        value = 0
        for _ in range(bits // RAW_CHUNK):
            r, target = self._target()
            self._consume(r, target, 1)
            value = (value << RAW_CHUNK) | target
        return value

    @property
    def consumed(self):
        return self._pos


def encode(symbols, cdfs):
    """Code ``symbols[i]`` with ``cdfs[i]`` and return the flushed stream."""
    if len(symbols) != len(cdfs):
        raise ValueError("need one CDF per symbol")
    enc = RangeEncoder()
    for s, c in zip(symbols, cdfs):
        enc.encode(int(s), c)
    return enc.finish()


def decode(stream, cdfs):
    dec = RangeDecoder(stream)
    return [dec.decode(_as_list(c)) for c in cdfs]


def _as_list(cdf):
    return cdf.tolist() if isinstance(cdf, np.ndarray) else cdf


def ideal_bits(symbols, cdfs):
    """Sum of ``-log2`` of each symbol's quantized probability."""
    total = 0.0
    for s, c in zip(symbols, cdfs):
        total -= np.log2((int(c[s + 1]) - int(c[s])) / TOTAL)
    return total

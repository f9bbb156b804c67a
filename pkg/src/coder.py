"""
Arithmetic Coder
Bit-level binary arithmetic coding with 32-bit state, driven by integer CDF tables.

Underflow is handled by deferring "pending" bits rather than by carry
propagation; finishing the stream costs a single bit.
"""

import logging
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
from bitarray import bitarray

from .exceptions import CorruptStreamError, FormatError, TruncatedStreamError

logger = logging.getLogger(__name__)

STATE_BITS = 32
FULL_RANGE = 1 << STATE_BITS
HALF_RANGE = FULL_RANGE >> 1
QUARTER_RANGE = HALF_RANGE >> 1
STATE_MASK = FULL_RANGE - 1
MAX_TOTAL = 1 << 16
MAX_OVERREAD_BITS = 96


@dataclass(frozen=True)
class Bitstream:
    """Coded bytes plus the number of symbols they carry"""
    data: bytes
    count: int

    @property
    def bits(self):
        return 8 * len(self.data)


def validate_cdf(cdf, symbols=None):
    """
    Check integer tables before coding with them

    Args:
        cdf (np.ndarray): n x (A+1) cumulative counts
        symbols (np.ndarray): Optional symbols that must have non-zero width

    Raises:
        FormatError: Table does not start at 0, is not monotone, has a total
            above 2^16, or gives a coded symbol zero width
    """
    cdf = np.asarray(cdf)
    if cdf.ndim != 2 or cdf.shape[1] < 2:
        raise FormatError(f"CDF table must be n x (A+1), got shape {cdf.shape}")
    if np.any(cdf[:, 0] != 0):
        raise FormatError("CDF tables must start at 0")
    if np.any(np.diff(cdf, axis=1) < 0):
        raise FormatError("CDF tables must be non-decreasing")
    if np.any(cdf[:, -1] > MAX_TOTAL) or np.any(cdf[:, -1] < 1):
        raise FormatError(f"CDF totals must lie in [1, {MAX_TOTAL}]")
    if symbols is not None:
        symbols = np.asarray(symbols, dtype=np.int64)
        if np.any((symbols < 0) | (symbols >= cdf.shape[1] - 1)):
            raise FormatError("symbol outside the table's alphabet")
        rows = np.arange(len(symbols))
        if np.any(cdf[rows, symbols + 1] <= cdf[rows, symbols]):
            raise FormatError("coded symbol has zero probability under its table")


class ArithmeticEncoder:
    """Accumulates symbols into a bitarray"""

    def __init__(self):
        self.low = 0
        self.high = STATE_MASK
        self.pending = 0
        self.count = 0
        self.bits = bitarray(endian="big")

    def _emit(self, bit):
        self.bits.append(bit)
        if self.pending:
            self.bits.extend(bitarray([bit ^ 1]) * self.pending)
            self.pending = 0

    def encode(self, start, end, total):
        """Narrow the interval to [start, end) out of total"""
        span = self.high - self.low + 1
        self.high = self.low + end * span // total - 1
        self.low = self.low + start * span // total
        while ((self.low ^ self.high) & HALF_RANGE) == 0:
            self._emit(self.low >> (STATE_BITS - 1))
            self.low = (self.low << 1) & STATE_MASK
            self.high = ((self.high << 1) & STATE_MASK) | 1
        while self.low & ~self.high & QUARTER_RANGE:
            self.pending += 1
            self.low = (self.low << 1) ^ HALF_RANGE
            self.high = ((self.high ^ HALF_RANGE) << 1) | HALF_RANGE | 1
        self.count += 1

    def encode_table(self, symbols, cdf):
        """Encode a run of symbols, one table row each"""
        symbols = np.asarray(symbols, dtype=np.int64)
        cdf = np.asarray(cdf, dtype=np.int64)
        if len(symbols) != len(cdf):
            raise FormatError(f"{len(symbols)} symbols but {len(cdf)} tables")
        if len(symbols) == 0:
            return
        validate_cdf(cdf, symbols)
        rows = np.arange(len(symbols))
        starts = cdf[rows, symbols].tolist()
        ends = cdf[rows, symbols + 1].tolist()
        totals = cdf[:, -1].tolist()
        for start, end, total in zip(starts, ends, totals):
            self.encode(start, end, total)

    def finish(self):
        """Terminate with one bit; an empty stream stays empty"""
        if self.count:
            # Pending bits would all be zeros, which the decoder reads past the end anyway
            self.bits.append(1)
        return self.bits.tobytes()


class ArithmeticDecoder:
    """
    Mirrors ArithmeticEncoder

    Reads past the end of the data as zeros, but only for a bounded number of
    bits; further reads mean the stream was truncated.
    """

    def __init__(self, data):
        self.bits = bitarray(endian="big")
        self.bits.frombytes(bytes(data))
        self.length = len(self.bits)
        self.position = 0
        self.low = 0
        self.high = STATE_MASK
        self.code = 0
        for _ in range(STATE_BITS):
            self.code = (self.code << 1) | self._read_bit()

    def _read_bit(self):
        if self.position < self.length:
            bit = self.bits[self.position]
        else:
            if self.position - self.length >= MAX_OVERREAD_BITS:
                raise TruncatedStreamError(f"read past end of a {self.length}-bit stream")
            bit = 0
        self.position += 1
        return bit

    def decode(self, cdf_row):
        """
        Decode one symbol

        Args:
            cdf_row (list): Cumulative counts [0, ..., total]

        Returns:
            int: Symbol index
        """
        total = cdf_row[-1]
        span = self.high - self.low + 1
        value = ((self.code - self.low + 1) * total - 1) // span
        if not 0 <= value < total:
            raise CorruptStreamError(f"decoder state out of range ({value} not in [0, {total}))")
        symbol = bisect_right(cdf_row, value) - 1
        start, end = cdf_row[symbol], cdf_row[symbol + 1]
        if end <= start:
            raise CorruptStreamError(f"decoded zero-width symbol {symbol}")

        self.high = self.low + end * span // total - 1
        self.low = self.low + start * span // total
        while ((self.low ^ self.high) & HALF_RANGE) == 0:
            self.code = ((self.code << 1) & STATE_MASK) | self._read_bit()
            self.low = (self.low << 1) & STATE_MASK
            self.high = ((self.high << 1) & STATE_MASK) | 1
        while self.low & ~self.high & QUARTER_RANGE:
            self.code = (self.code & HALF_RANGE) | ((self.code << 1) & (STATE_MASK >> 1)) | self._read_bit()
            self.low = (self.low << 1) ^ HALF_RANGE
            self.high = ((self.high ^ HALF_RANGE) << 1) | HALF_RANGE | 1
        return symbol

    def decode_table(self, cdf):
        """Decode one symbol per table row"""
        cdf = np.asarray(cdf, dtype=np.int64)
        if len(cdf) == 0:
            return np.zeros(0, dtype=np.int64)
        validate_cdf(cdf)
        return np.array([self.decode(row) for row in cdf.tolist()], dtype=np.int64)


def ac_encode(symbols, cdf):
    """
    Encode symbols, each under its own CDF table row

    Args:
        symbols (np.ndarray): n symbols
        cdf (np.ndarray): n x (A+1) integer tables

    Returns:
        Bitstream: Coded bytes
    """
    encoder = ArithmeticEncoder()
    encoder.encode_table(symbols, cdf)
    stream = Bitstream(encoder.finish(), len(symbols))
    logger.debug(f"Encoded {stream.count} symbols into {stream.bits} bits")
    return stream


def ac_decode(stream, cdf_provider):
    """
    Decode stream.count symbols

    Args:
        stream (Bitstream): Coded bytes and symbol count
        cdf_provider (callable): (index, decoded history) -> CDF row for that symbol

    Returns:
        list: Decoded symbols
    """
    decoder = ArithmeticDecoder(stream.data)
    history = []
    for index in range(stream.count):
        row = np.asarray(cdf_provider(index, history), dtype=np.int64)
        validate_cdf(row[None, :])
        history.append(decoder.decode(row.tolist()))
    return history


def uniform_cdf(alphabet_size):
    """CDF row with every symbol given width 1 (total equals the alphabet size)"""
    if not 1 <= alphabet_size <= MAX_TOTAL:
        raise FormatError(f"alphabet size {alphabet_size} outside [1, {MAX_TOTAL}]")
    return np.arange(alphabet_size + 1, dtype=np.int64)


def encode_uniform(symbols, alphabet_size):
    """Code symbols at log2(alphabet_size) bits each"""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    uniform_cdf(alphabet_size)
    if np.any((symbols < 0) | (symbols >= alphabet_size)):
        raise FormatError(f"symbol outside uniform alphabet of size {alphabet_size}")
    encoder = ArithmeticEncoder()
    for symbol in symbols.tolist():
        encoder.encode(symbol, symbol + 1, alphabet_size)
    return Bitstream(encoder.finish(), len(symbols))


def decode_uniform(stream, alphabet_size):
    row = uniform_cdf(alphabet_size).tolist()
    decoder = ArithmeticDecoder(stream.data)
    return np.array([decoder.decode(row) for _ in range(stream.count)], dtype=np.int64)

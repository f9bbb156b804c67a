#!/usr/bin/env python3
"""
Pytest tests for the arithmetic coder
Round trips, code lengths near the ideal and malformed-input handling
"""

import math

import pytest
import numpy as np
import sys
import os

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.coder import (MAX_OVERREAD_BITS, ArithmeticDecoder, Bitstream, ac_decode, ac_encode, decode_uniform,
                       encode_uniform, uniform_cdf, validate_cdf)
from src.entropy_model import CDF_TOTAL, cdf_from_probabilities, table_code_length
from src.exceptions import FormatError, PrecisionError, TruncatedStreamError


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def random_tables(rng, n, alphabet_size, concentration=0.3):
    return cdf_from_probabilities(rng.dirichlet(np.ones(alphabet_size) * concentration, size=n))


def sample(rng, cdf):
    widths = np.diff(cdf, axis=1)
    return np.array([rng.choice(len(w), p=w / w.sum()) for w in widths])


def decode_all(stream, cdf):
    return ArithmeticDecoder(stream.data).decode_table(cdf)


class TestRoundTrip:
    """Encode then decode with the same tables"""

    def test_uniform_bytes(self, rng):
        cdf = np.tile(uniform_cdf(256), (1000, 1))
        symbols = rng.integers(0, 256, size=1000)
        stream = ac_encode(symbols, cdf)
        assert 8000 <= stream.bits <= 8032
        np.testing.assert_array_equal(decode_all(stream, cdf), symbols)

    def test_empty_stream(self):
        stream = ac_encode(np.zeros(0, dtype=np.int64), np.zeros((0, 257), dtype=np.int64))
        assert stream.data == b"" and stream.count == 0
        assert ac_decode(stream, lambda i, h: uniform_cdf(256)) == []

    def test_peaked_table_costs_almost_nothing(self):
        probs = np.zeros((1, 256))
        probs[0, 3] = 1.0
        cdf = np.tile(cdf_from_probabilities(probs), (1000, 1))
        symbols = np.full(1000, 3)
        stream = ac_encode(symbols, cdf)
        assert len(stream.data) <= 4
        np.testing.assert_array_equal(decode_all(stream, cdf), symbols)

    def test_single_symbol_alphabet(self):
        cdf = np.tile(np.array([0, 1]), (10, 1))
        stream = ac_encode(np.zeros(10, dtype=np.int64), cdf)
        assert len(stream.data) == 1
        np.testing.assert_array_equal(decode_all(stream, cdf), np.zeros(10))

    def test_random_tables(self, rng):
        for alphabet_size in (2, 25, 256):
            cdf = random_tables(rng, 500, alphabet_size)
            symbols = sample(rng, cdf)
            stream = ac_encode(symbols, cdf)
            np.testing.assert_array_equal(decode_all(stream, cdf), symbols)

    def test_length_close_to_ideal(self, rng):
        cdf = random_tables(rng, 3000, 256, concentration=1.0)
        symbols = sample(rng, cdf)
        rows = np.arange(len(symbols))
        ideal = -np.log2((cdf[rows, symbols + 1] - cdf[rows, symbols]) / CDF_TOTAL).sum()
        stream = ac_encode(symbols, cdf)
        assert stream.bits <= ideal + 16

    def test_adaptive_provider(self, rng):
        """Table for each symbol depends on the previous decoded symbol"""
        first = np.array([0, 16384, 32768, 49152, CDF_TOTAL])
        tables = random_tables(rng, 4, 4, concentration=0.5)
        symbols = [int(rng.integers(0, 4))]
        for _ in range(299):
            symbols.append(int(sample(rng, tables[symbols[-1]][None, :])[0]))

        def provider(index, history):
            return first if index == 0 else tables[history[-1]]

        cdf = np.stack([provider(i, symbols[:i]) for i in range(len(symbols))])
        stream = ac_encode(np.array(symbols), cdf)
        assert ac_decode(stream, provider) == symbols

    @pytest.mark.slow
    def test_fuzz(self, rng):
        for trial in range(20):
            alphabet_size = int(rng.integers(2, 300))
            n = int(rng.integers(1, 20000))
            cdf = random_tables(rng, n, alphabet_size, concentration=float(rng.uniform(0.05, 2.0)))
            symbols = sample(rng, cdf)
            np.testing.assert_array_equal(decode_all(ac_encode(symbols, cdf), cdf), symbols)

    @pytest.mark.slow
    def test_many_short_streams(self, rng):
        """Ten thousand streams: exact decode and at most 32 bits over the ideal length"""
        for trial in range(10_000):
            alphabet_size = int(rng.integers(2, 300))
            n = int(rng.integers(1, 200))
            cdf = random_tables(rng, n, alphabet_size, concentration=float(rng.uniform(0.05, 2.0)))
            # inverse-CDF draw; every width is at least one
            draws = rng.integers(0, CDF_TOTAL, size=n)
            symbols = (cdf[:, 1:] <= draws[:, None]).sum(axis=1)
            stream = ac_encode(symbols, cdf)
            assert stream.bits <= table_code_length(cdf, symbols) + 32, f"trial {trial}"
            np.testing.assert_array_equal(decode_all(stream, cdf), symbols)


class TestUniformCoding:
    """Fixed-rate side information"""

    def test_round_trip(self, rng):
        symbols = rng.integers(0, 25, size=400)
        stream = encode_uniform(symbols, 25)
        np.testing.assert_array_equal(decode_uniform(stream, 25), symbols)
        assert stream.bits <= math.ceil(400 * math.log2(25)) + 16

    def test_symbol_outside_alphabet(self):
        with pytest.raises(FormatError):
            encode_uniform(np.array([25]), 25)

    def test_alphabet_too_large(self):
        with pytest.raises(FormatError):
            uniform_cdf(CDF_TOTAL + 1)


class TestMalformedInput:
    """Precondition and stream errors"""

    def test_format_error_is_precision_error(self):
        assert FormatError is PrecisionError

    def test_non_monotone_table(self):
        with pytest.raises(FormatError):
            validate_cdf(np.array([[0, 5, 3, 10]]))

    def test_table_must_start_at_zero(self):
        with pytest.raises(FormatError):
            validate_cdf(np.array([[1, 5, 10]]))

    def test_total_above_precision(self):
        with pytest.raises(FormatError):
            validate_cdf(np.array([[0, 1, CDF_TOTAL + 1]]))

    def test_zero_width_symbol(self):
        with pytest.raises(FormatError):
            ac_encode(np.array([1]), np.array([[0, 10, 10, 20]]))

    def test_symbol_count_mismatch(self):
        with pytest.raises(FormatError):
            ac_encode(np.array([0, 1]), np.tile(uniform_cdf(4), (3, 1)))

    def test_truncated_stream(self, rng):
        cdf = np.tile(uniform_cdf(256), (2000, 1))
        stream = ac_encode(rng.integers(0, 256, size=2000), cdf)
        cut = Bitstream(stream.data[:len(stream.data) // 2], stream.count)
        with pytest.raises(TruncatedStreamError):
            decode_all(cut, cdf)

    def test_short_overread_is_allowed(self):
        decoder = ArithmeticDecoder(b"")
        assert decoder.position == 32 < MAX_OVERREAD_BITS


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

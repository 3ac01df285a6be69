import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from splatzip.codec.huffman import (HuffmanDecodeError, canonical_codes, code_lengths, decode_stream,
                                    encode_stream, huffman_decode, huffman_encode, table_size)


def test_single_symbol_one_bit():
    lengths, payload, nbits = huffman_encode(np.full(37, 5), 8)
    assert lengths.tolist() == [0, 0, 0, 0, 0, 1, 0, 0]
    assert nbits == 37
    assert huffman_decode(lengths, payload, 37, nbits).tolist() == [5] * 37


@pytest.mark.parametrize("k", [1, 3, 6])
def test_uniform_power_of_two(k, rng):
    sym = np.tile(np.arange(2**k), 10)
    rng.shuffle(sym)
    lengths, _, nbits = huffman_encode(sym, 2**k)
    assert set(lengths.tolist()) == {k}
    assert nbits == k * len(sym)


def test_skewed_near_optimal(rng):
    sym = rng.choice(3, size=10_000, p=[0.9, 0.05, 0.05])
    _, _, nbits = huffman_encode(sym, 3)
    opt = oracles.huffman_cost(np.bincount(sym, minlength=3).tolist())
    assert abs(nbits - opt) <= 0.05 * opt
    assert nbits == opt


def test_matches_oracle_cost(rng):
    for _ in range(20):
        counts = rng.integers(0, 50, int(rng.integers(2, 40)))
        counts[0] += 1
        sym = np.repeat(np.arange(len(counts)), counts)
        _, _, nbits = huffman_encode(sym, len(counts))
        assert nbits == oracles.huffman_cost(counts.tolist())


def test_canonical_codes_example():
    # lengths (2, 1, 3, 3): B=0, A=10, C=110, D=111
    assert canonical_codes([2, 1, 3, 3]).tolist() == [0b10, 0b0, 0b110, 0b111]


def test_kraft_violation():
    with pytest.raises(HuffmanDecodeError):
        canonical_codes([1, 1, 1])


def test_empty_input():
    lengths, payload, nbits = huffman_encode(np.zeros(0, np.int64), 16)
    assert len(lengths) == 0 and payload == b"" and nbits == 0
    assert decode_stream(encode_stream([], 16)).size == 0


def test_alphabet_limit():
    with pytest.raises(ValueError):
        huffman_encode([0], 2**16 + 1)


def test_symbol_outside_alphabet():
    with pytest.raises(ValueError):
        huffman_encode([0, 4], 4)


def test_stream_within_fixed_width_bound(rng):
    for alphabet in (2, 64, 512, 1024):
        for _ in range(5):
            sym = rng.integers(0, alphabet, int(rng.integers(1, 5000)))
            buf = encode_stream(sym, alphabet)
            fixed = math.ceil(len(sym) * max(1, math.ceil(math.log2(alphabet))) / 8)
            assert len(buf) <= fixed + table_size(alphabet) + 16


def test_truncated_stream(rng):
    buf = encode_stream(rng.integers(0, 8, 100), 8)
    with pytest.raises(HuffmanDecodeError):
        decode_stream(buf[:-1])
    with pytest.raises(HuffmanDecodeError):
        decode_stream(buf[:10])


def test_long_codes_round_trip():
    # Fibonacci counts force code lengths past the 16-bit lookup table
    fib = [1, 1]
    while len(fib) < 24:
        fib.append(fib[-1] + fib[-2])
    sym = np.repeat(np.arange(24), fib)
    lengths = code_lengths(np.bincount(sym))
    assert lengths.max() > 16
    assert np.array_equal(decode_stream(encode_stream(sym, 24)), sym)


@given(st.integers(1, 300), st.data())
def test_round_trip_property(alphabet, data):
    sym = data.draw(arrays(np.int64, st.integers(0, 300), elements=st.integers(0, alphabet - 1)))
    assert np.array_equal(decode_stream(encode_stream(sym, alphabet)), sym)


@given(st.lists(st.integers(0, 1000), min_size=2, max_size=60))
def test_lengths_prefix_free(counts):
    lengths = code_lengths(counts)
    used = lengths[lengths > 0]
    if len(used) > 1:
        assert sum(2.0 ** -used) <= 1.0 + 1e-12
    assert np.all((lengths > 0) == (np.asarray(counts) > 0))

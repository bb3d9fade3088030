import numpy as np
import pytest
from hypothesis import given, strategies as st

from linecodec.rangecoder import (BitstreamError, BitstreamExhausted, RangeDecoder,
                                  RangeEncoder, unzigzag, zigzag)


def test_random_bits_many_contexts(rng):
    bits = rng.integers(0, 2, size=10**6)
    ctx = rng.integers(0, 64, size=10**6)
    enc = RangeEncoder(64)
    for b, c in zip(bits.tolist(), ctx.tolist()):
        enc.encode_bit(c, b)
    data = enc.finish()
    dec = RangeDecoder(data, 64)
    out = [dec.decode_bit(c) for c in ctx.tolist()]
    dec.finish()
    assert np.array_equal(out, bits)


def test_all_zero_compresses():
    n = 100_000
    enc = RangeEncoder(1)
    for _ in range(n):
        enc.encode_bit(0, 0)
    assert 8 * len(enc.finish()) < 0.01 * n


def test_alternating_incompressible():
    n = 100_000
    enc = RangeEncoder(1)
    for i in range(n):
        enc.encode_bit(0, i & 1)
    assert 8 * len(enc.finish()) >= 0.99 * n


def test_eg_k0_zero_is_one_bit():
    enc = RangeEncoder(1)
    with enc.measure() as c:
        enc.encode_eg(0, 0)
    assert c[0] == 1.0


def test_eg_k2_exhaustive():
    enc = RangeEncoder(1)
    for v in range(10_001):
        enc.encode_eg(v, 2)
    dec = RangeDecoder(enc.finish(), 1)
    assert all(dec.decode_eg(2) == v for v in range(10_001))
    dec.finish()


def test_zigzag():
    assert zigzag(-3) == 5 and unzigzag(5) == -3
    assert [zigzag(v) for v in (0, -1, 1, -2, 2)] == [0, 1, 2, 3, 4]


ops = st.lists(st.one_of(
    st.tuples(st.just("bit"), st.integers(0, 7), st.integers(0, 1)),
    st.tuples(st.just("byp"), st.integers(1, 20), st.integers(0, 2**20 - 1)),
    st.tuples(st.just("eg"), st.integers(0, 4), st.integers(0, 5000)),
    st.tuples(st.just("seg"), st.integers(0, 3), st.integers(-3000, 3000)),
), max_size=300)


@given(ops)
def test_mixed_roundtrip(seq):
    enc = RangeEncoder(16)
    for kind, a, v in seq:
        if kind == "bit":
            enc.encode_bit(a, v)
        elif kind == "byp":
            enc.encode_bypass(v & ((1 << a) - 1), a)
        elif kind == "eg":
            enc.encode_eg(v, a, 8, 4)
        else:
            enc.encode_seg(v, a)
    data = enc.finish()
    dec = RangeDecoder(data, 16)
    for kind, a, v in seq:
        if kind == "bit":
            assert dec.decode_bit(a) == v
        elif kind == "byp":
            assert dec.decode_bypass(a) == v & ((1 << a) - 1)
        elif kind == "eg":
            assert dec.decode_eg(a, 8, 4) == v
        else:
            assert dec.decode_seg(a) == v
    dec.finish()


@given(st.lists(st.integers(0, 1), min_size=1, max_size=2000))
def test_cost_tracks_length(bits):
    enc = RangeEncoder(2)
    for i, b in enumerate(bits):
        enc.encode_bit(i & 1, b)
    cost = enc.cost[0]
    n = len(enc.finish())
    # flush adds at most 5 bytes; the coder is within a few bits of -log2 p
    assert 8 * n <= cost + 8 * 5 + 8 + 0.01 * cost


def test_probe_matches_emitter(rng):
    enc = RangeEncoder(8)
    for b in rng.integers(0, 2, 200).tolist():
        enc.encode_bit(3, b)
    probe = enc.probe()
    with probe.measure() as pc:
        for v in range(50):
            probe.encode_eg(v, 1, 4, 2)
    with enc.measure() as ec:
        for v in range(50):
            enc.encode_eg(v, 1, 4, 2)
    assert pc[0] == ec[0]
    assert np.array_equal(probe.probs, enc.probs)


def test_exhaustion_and_trailing():
    enc = RangeEncoder(1)
    for _ in range(100):
        enc.encode_bypass(1, 1)
    data = enc.finish()
    with pytest.raises(BitstreamExhausted):
        dec = RangeDecoder(data[: len(data) // 2], 1)
        for _ in range(100):
            dec.decode_bypass(1)
    dec = RangeDecoder(data + b"\x00", 1)
    for _ in range(100):
        dec.decode_bypass(1)
    with pytest.raises(BitstreamError):
        dec.finish()


class _RefEncoder:
    """LZMA range encoder written with plain Python ints, with the two-rate
    probability estimate, used as an oracle."""

    def __init__(self, n):
        self.low, self.range, self.cache, self.csize = 0, 0xFFFFFFFF, 0, 1
        self.fast = [32768] * n
        self.slow = [32768] * n
        self.out = bytearray()

    def _shift(self):
        if self.low < 0xFF000000 or self.low > 0xFFFFFFFF:
            carry = self.low >> 32
            b = self.cache
            while self.csize:
                self.out.append((b + carry) & 0xFF)
                b = 0xFF
                self.csize -= 1
            self.cache = (self.low >> 24) & 0xFF
        self.csize += 1
        self.low = (self.low & 0xFFFFFF) << 8

    def _norm(self):
        while self.range < 1 << 24:
            self.range = (self.range << 8) & 0xFFFFFFFF
            self._shift()

    def bit(self, c, b):
        p = (self.fast[c] + self.slow[c]) // 32
        bound = (self.range >> 12) * p
        if b:
            self.low += bound
            self.range -= bound
            self.fast[c] -= self.fast[c] // 16
            self.slow[c] -= self.slow[c] // 128
        else:
            self.range = bound
            self.fast[c] += (65536 - self.fast[c]) // 16
            self.slow[c] += (65536 - self.slow[c]) // 128
        self._norm()

    def direct(self, v, n):
        for i in reversed(range(n)):
            self.range >>= 1
            if (v >> i) & 1:
                self.low += self.range
            self._norm()

    def eg(self, v, k, ctx=None, nctx=1):
        v += 1 << k
        m = v.bit_length() - 1 - k
        for i in range(m + 1):
            b = int(i < m)
            if ctx is None:
                self.direct(b, 1)
            else:
                self.bit(ctx + min(i, nctx - 1), b)
        self.direct(v & ((1 << (m + k)) - 1), m + k)

    def finish(self):
        for _ in range(5):
            self._shift()
        return bytes(self.out)


def test_matches_reference_coder(rng):
    ref = _RefEncoder(4)
    enc = RangeEncoder(4)
    for _ in range(3000):
        kind = rng.integers(3)
        if kind == 0:
            c, b = int(rng.integers(4)), int(rng.random() < 0.8)
            ref.bit(c, b)
            enc.encode_bit(c, b)
        elif kind == 1:
            n = int(rng.integers(1, 17))
            v = int(rng.integers(1 << n))
            ref.direct(v, n)
            enc.encode_bypass(v, n)
        else:
            v, k = int(rng.integers(0, 500)), int(rng.integers(0, 3))
            ref.eg(v, k, 1, 3)
            enc.encode_eg(v, k, 1, 3)
    assert enc.finish() == ref.finish()

"""Adaptive binary range coder.

LZMA-style carry-less range coder: 32-bit range, 33-bit low with a cache byte
for carry propagation, 12-bit coding probabilities.  Each context keeps two
16-bit estimates of P(0) adapted by shifts (a fast one and a slow one); the
coding probability is their mean truncated to 12 bits.  The
hot paths are numba kernels operating on a small int64 state vector so that
batched callers (octree levels) can run entirely in compiled code.

Every coded binary decision also accumulates its ideal cost (-log2 p) into a
float accumulator.  The encoder and the rate probe share the kernels, so the
cost measured by a probe equals the cost accounted during emission.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numba import njit

PROB_BITS = 12
PROB_ONE = 1 << PROB_BITS
STATE_BITS = 16
STATE_ONE = 1 << STATE_BITS
STATE_INIT = STATE_ONE // 2
FAST_SHIFT = 4
SLOW_SHIFT = 7
TOP = 1 << 24

# state vector slots
LOW, RANGE, CACHE, CACHE_SIZE, POS, ERR, CODE = range(7)
STATE_SIZE = 7

ERR_EXHAUSTED = 1
ERR_GRAMMAR = 2

MAX_EG_PREFIX = 40


class BitstreamError(ValueError):
    pass


class BitstreamExhausted(BitstreamError):
    pass


# --- kernels ---------------------------------------------------------------

@njit(cache=True)
def _log2(x):
    return np.log(x) * 1.4426950408889634


@njit(cache=True)
def _shift_low(st, buf, emit):
    low = st[LOW]
    if low < 0xFF000000 or low >= 0x100000000:
        carry = low >> 32
        temp = st[CACHE]
        while True:
            if emit:
                buf[st[POS]] = (temp + carry) & 0xFF
            st[POS] += 1
            temp = 0xFF
            st[CACHE_SIZE] -= 1
            if st[CACHE_SIZE] == 0:
                break
        st[CACHE] = (low >> 24) & 0xFF
    st[CACHE_SIZE] += 1
    st[LOW] = (low & 0x00FFFFFF) << 8


@njit(cache=True)
def _prob(probs, ctx):
    # mean of the two 16-bit states, as a 12-bit probability of a 0
    return (np.int64(probs[ctx, 0]) + np.int64(probs[ctx, 1])) >> (STATE_BITS + 1 - PROB_BITS)


@njit(cache=True)
def _adapt(probs, ctx, bit):
    f = np.int64(probs[ctx, 0])
    w = np.int64(probs[ctx, 1])
    if bit == 0:
        probs[ctx, 0] = f + ((STATE_ONE - f) >> FAST_SHIFT)
        probs[ctx, 1] = w + ((STATE_ONE - w) >> SLOW_SHIFT)
    else:
        probs[ctx, 0] = f - (f >> FAST_SHIFT)
        probs[ctx, 1] = w - (w >> SLOW_SHIFT)


@njit(cache=True)
def enc_bit(st, buf, emit, probs, cost, ctx, bit):
    p = _prob(probs, ctx)
    bound = (st[RANGE] >> PROB_BITS) * p
    if bit == 0:
        st[RANGE] = bound
        cost[0] -= _log2(p / PROB_ONE)
    else:
        st[LOW] += bound
        st[RANGE] -= bound
        cost[0] -= _log2((PROB_ONE - p) / PROB_ONE)
    _adapt(probs, ctx, bit)
    while st[RANGE] < TOP:
        st[RANGE] <<= 8
        _shift_low(st, buf, emit)


@njit(cache=True)
def enc_bypass(st, buf, emit, cost, value, nbits):
    for i in range(nbits - 1, -1, -1):
        st[RANGE] >>= 1
        if (value >> i) & 1:
            st[LOW] += st[RANGE]
        while st[RANGE] < TOP:
            st[RANGE] <<= 8
            _shift_low(st, buf, emit)
    cost[0] += nbits


@njit(cache=True)
def enc_eg(st, buf, emit, probs, cost, value, k, ctx_base, nctx):
    """Order-k Exp-Golomb; unary prefix context coded when ctx_base >= 0."""
    v = value + (np.int64(1) << k)
    n = 0
    t = v
    while t > 0:
        n += 1
        t >>= 1
    m = n - 1 - k
    for i in range(m + 1):
        b = 1 if i < m else 0
        if ctx_base >= 0:
            enc_bit(st, buf, emit, probs, cost, ctx_base + min(i, nctx - 1), b)
        else:
            enc_bypass(st, buf, emit, cost, b, 1)
    enc_bypass(st, buf, emit, cost, v, m + k)


@njit(cache=True)
def enc_flush(st, buf, emit):
    for _ in range(5):
        _shift_low(st, buf, emit)


@njit(cache=True)
def _next_byte(st, data):
    pos = st[POS]
    if pos >= len(data):
        st[ERR] = ERR_EXHAUSTED
        st[POS] = pos + 1
        return 0
    st[POS] = pos + 1
    return np.int64(data[pos])


@njit(cache=True)
def dec_init(st, data):
    st[RANGE] = 0xFFFFFFFF
    st[CODE] = 0
    first = _next_byte(st, data)
    if first != 0:
        st[ERR] = ERR_GRAMMAR
    for _ in range(4):
        st[CODE] = ((st[CODE] << 8) | _next_byte(st, data)) & 0xFFFFFFFF


@njit(cache=True)
def dec_bit(st, data, probs, cost, ctx):
    p = _prob(probs, ctx)
    bound = (st[RANGE] >> PROB_BITS) * p
    if st[CODE] < bound:
        st[RANGE] = bound
        cost[0] -= _log2(p / PROB_ONE)
        bit = 0
    else:
        st[CODE] -= bound
        st[RANGE] -= bound
        cost[0] -= _log2((PROB_ONE - p) / PROB_ONE)
        bit = 1
    _adapt(probs, ctx, bit)
    while st[RANGE] < TOP:
        st[RANGE] <<= 8
        st[CODE] = ((st[CODE] << 8) | _next_byte(st, data)) & 0xFFFFFFFF
    return bit


@njit(cache=True)
def dec_bypass(st, data, cost, nbits):
    value = np.int64(0)
    for _ in range(nbits):
        st[RANGE] >>= 1
        b = 0
        if st[CODE] >= st[RANGE]:
            st[CODE] -= st[RANGE]
            b = 1
        value = (value << 1) | b
        while st[RANGE] < TOP:
            st[RANGE] <<= 8
            st[CODE] = ((st[CODE] << 8) | _next_byte(st, data)) & 0xFFFFFFFF
    cost[0] += nbits
    return value


@njit(cache=True)
def dec_eg(st, data, probs, cost, k, ctx_base, nctx):
    m = 0
    while True:
        if ctx_base >= 0:
            b = dec_bit(st, data, probs, cost, ctx_base + min(m, nctx - 1))
        else:
            b = dec_bypass(st, data, cost, 1)
        if b == 0 or st[ERR] != 0:
            break
        m += 1
        if m > MAX_EG_PREFIX:
            st[ERR] = ERR_GRAMMAR
            return 0
    rest = dec_bypass(st, data, cost, m + k)
    return ((np.int64(1) << (m + k)) | rest) - (np.int64(1) << k)


@njit(cache=True)
def enc_seg_rows(st, buf, emit, probs, cost, values, k, ctx_base, ctx_stride, nctx):
    """Signed EG of a (n, m) array, row by row; column c uses contexts
    ctx_base + c * ctx_stride."""
    for i in range(values.shape[0]):
        for c in range(values.shape[1]):
            v = values[i, c]
            u = 2 * v if v >= 0 else -2 * v - 1
            enc_eg(st, buf, emit, probs, cost, u, k, ctx_base + c * ctx_stride, nctx)


@njit(cache=True)
def dec_seg_rows(st, data, probs, cost, out, k, ctx_base, ctx_stride, nctx):
    for i in range(out.shape[0]):
        for c in range(out.shape[1]):
            u = dec_eg(st, data, probs, cost, k, ctx_base + c * ctx_stride, nctx)
            if st[ERR] != 0:
                return
            out[i, c] = u >> 1 if u % 2 == 0 else -((u + 1) >> 1)


# --- python API --------------------------------------------------------------

def zigzag(v):
    return 2 * v if v >= 0 else -2 * v - 1


def unzigzag(u):
    return u >> 1 if u % 2 == 0 else -((u + 1) >> 1)


class RangeEncoder:
    """Binary range encoder with adaptive contexts.

    With ``discard=True`` no bytes are stored (rate probe); state evolution and
    cost accounting are identical to an emitting encoder.
    """

    def __init__(self, num_contexts, probs=None, discard=False):
        self.st = np.zeros(STATE_SIZE, dtype=np.int64)
        self.st[RANGE] = 0xFFFFFFFF
        self.st[CACHE_SIZE] = 1
        self.emit = not discard
        self.buf = np.zeros(1 << 12 if self.emit else 0, dtype=np.uint8)
        if probs is None:
            probs = np.full((num_contexts, 2), STATE_INIT, dtype=np.uint16)
        self.probs = probs
        self.cost = np.zeros(1, dtype=np.float64)
        self._finished = False

    @property
    def bits(self):
        """Accumulated ideal cost of all coded symbols, in bits."""
        return float(self.cost[0])

    def reserve(self, nbytes):
        if not self.emit:
            return
        need = int(self.st[POS]) + int(nbytes) + 64
        if need > len(self.buf):
            grown = np.zeros(max(need, 2 * len(self.buf)), dtype=np.uint8)
            grown[: len(self.buf)] = self.buf
            self.buf = grown

    @contextmanager
    def measure(self):
        """Cost of the symbols coded inside the block, accumulated from zero
        so that identical symbol sequences report identical costs."""
        saved = self.cost
        self.cost = np.zeros(1, dtype=np.float64)
        box = [0.0]
        try:
            yield box
        finally:
            box[0] = float(self.cost[0])
            saved[0] += self.cost[0]
            self.cost = saved

    def probe(self):
        """A discarding encoder starting from a copy of this encoder's contexts."""
        return RangeEncoder(len(self.probs), probs=self.probs.copy(), discard=True)

    def encode_bit(self, ctx, bit):
        self.reserve(2)
        enc_bit(self.st, self.buf, self.emit, self.probs, self.cost, ctx, int(bit))

    def encode_bypass(self, value, nbits):
        if nbits <= 0:
            return
        if value < 0 or value >> nbits:
            raise ValueError(f"value {value} does not fit in {nbits} bits")
        self.reserve(nbits // 8 + 2)
        enc_bypass(self.st, self.buf, self.emit, self.cost, int(value), int(nbits))

    def encode_eg(self, value, k, ctx=None, nctx=1):
        if value < 0:
            raise ValueError("Exp-Golomb value must be non-negative")
        self.reserve(2 * MAX_EG_PREFIX + k)
        enc_eg(self.st, self.buf, self.emit, self.probs, self.cost, int(value), int(k),
               -1 if ctx is None else int(ctx), int(nctx))

    def encode_seg(self, value, k, ctx=None, nctx=1):
        self.encode_eg(zigzag(int(value)), k, ctx, nctx)

    def encode_seg_rows(self, values, k, ctx, ctx_stride, nctx=1):
        """Signed EG of every entry of a 2-d integer array in row order."""
        values = np.ascontiguousarray(values, dtype=np.int64)
        if values.ndim != 2:
            raise ValueError("expected a 2-d array")
        if values.size and int(np.abs(values).max()) >= 1 << 40:
            raise ValueError("value too large for Exp-Golomb coding")
        self.reserve(values.size * (2 * MAX_EG_PREFIX + k) // 8 + 16)
        enc_seg_rows(self.st, self.buf, self.emit, self.probs, self.cost, values, int(k),
                     int(ctx), int(ctx_stride), int(nctx))

    def finish(self):
        if self._finished:
            raise BitstreamError("encoder already finished")
        self.reserve(8)
        enc_flush(self.st, self.buf, self.emit)
        self._finished = True
        return bytes(self.buf[: int(self.st[POS])]) if self.emit else b""

    @property
    def nbytes(self):
        return int(self.st[POS])


class RangeDecoder:
    def __init__(self, data, num_contexts):
        self.data = np.frombuffer(bytes(data), dtype=np.uint8)
        self.st = np.zeros(STATE_SIZE, dtype=np.int64)
        self.probs = np.full((num_contexts, 2), STATE_INIT, dtype=np.uint16)
        self.cost = np.zeros(1, dtype=np.float64)
        dec_init(self.st, self.data)
        self.check()

    def check(self):
        err = self.st[ERR]
        if err == ERR_EXHAUSTED:
            raise BitstreamExhausted("bitstream exhausted")
        if err:
            raise BitstreamError("malformed range coded payload")

    @property
    def bits(self):
        return float(self.cost[0])

    def decode_bit(self, ctx):
        b = dec_bit(self.st, self.data, self.probs, self.cost, ctx)
        self.check()
        return b

    def decode_bypass(self, nbits):
        if nbits <= 0:
            return 0
        v = dec_bypass(self.st, self.data, self.cost, int(nbits))
        self.check()
        return int(v)

    def decode_eg(self, k, ctx=None, nctx=1):
        v = dec_eg(self.st, self.data, self.probs, self.cost, int(k),
                   -1 if ctx is None else int(ctx), int(nctx))
        self.check()
        return int(v)

    def decode_seg(self, k, ctx=None, nctx=1):
        return unzigzag(self.decode_eg(k, ctx, nctx))

    def decode_seg_rows(self, n, m, k, ctx, ctx_stride, nctx=1):
        out = np.zeros((n, m), dtype=np.int64)
        dec_seg_rows(self.st, self.data, self.probs, self.cost, out, int(k), int(ctx),
                     int(ctx_stride), int(nctx))
        self.check()
        return out

    @property
    def consumed(self):
        return int(self.st[POS])

    def finish(self):
        """Verify the payload was consumed exactly."""
        self.check()
        extra = len(self.data) - self.consumed
        if extra != 0:
            raise BitstreamError(f"{extra} trailing payload bytes after decoding")

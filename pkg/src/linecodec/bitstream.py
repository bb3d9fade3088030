"""Container format: stream header, context layout and node payload grammar.

Layout (little-endian)::

    header   'LPCC' u8 version, 6 x i32 bbox, f32 Q_g, u16 Q_a, u8 flags,
             u32 point_count, u32 payload_bytes
             [f32 Q_r, only with FLAG_LOSSY_OFFSETS]
    payload  one range-coded segment (see docs/bitstream.md)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .quantizer import (QuantizedLine, symbol_to_theta, theta_alphabet,
                        theta_to_symbol)
from .rangecoder import BitstreamError

MAGIC = b"LPCC"
VERSION = 1
HEADER_FMT = "<4sB6ifHBII"
HEADER_SIZE = struct.calcsize(HEADER_FMT)
EXT_FMT = "<f"

FLAG_LOSSLESS = 0x01
FLAG_LINEAR = 0x02
FLAG_MULTI_LEAF = 0x04
FLAG_LOSSY_OFFSETS = 0x08
KNOWN_FLAGS = FLAG_LOSSLESS | FLAG_LINEAR | FLAG_MULTI_LEAF | FLAG_LOSSY_OFFSETS

MAX_DEPTH_CTX = 32
MAX_LINES_CODED = 255

# context layout
CTX_OCC = 0
CTX_SUBTREE = CTX_OCC + 64
CTX_HAS_LINES = CTX_SUBTREE + MAX_DEPTH_CTX
CTX_RESIDUAL = CTX_HAS_LINES + MAX_DEPTH_CTX
CTX_LINE_COUNT = CTX_RESIDUAL + 1
CTX_DPHI = CTX_LINE_COUNT + 8
CTX_DTHETA = CTX_DPHI + 8
CTX_RESID = CTX_DTHETA + 8
CTX_LEAF_COUNT = CTX_RESID + 24
NUM_CONTEXTS = CTX_LEAF_COUNT + 8

# Exp-Golomb orders
EG_N = 2
EG_A = 2
EG_D = 1
EG_ANGLE_DELTA = 0
EG_RESID = 0


class HeaderError(BitstreamError):
    pass


class GrammarError(BitstreamError):
    pass


@dataclass
class StreamHeader:
    bbox_min: tuple
    bbox_max: tuple
    q_g: float
    q_a: int
    flags: int
    point_count: int
    payload_bytes: int = 0
    version: int = VERSION
    q_r: float | None = None  # offset step, present with FLAG_LOSSY_OFFSETS

    @property
    def size(self):
        return HEADER_SIZE + (struct.calcsize(EXT_FMT) if self.lossy_offsets else 0)

    @property
    def lossless(self):
        return bool(self.flags & FLAG_LOSSLESS)

    @property
    def linear(self):
        return bool(self.flags & FLAG_LINEAR)

    @property
    def multi_leaf(self):
        return bool(self.flags & FLAG_MULTI_LEAF)

    @property
    def lossy_offsets(self):
        return bool(self.flags & FLAG_LOSSY_OFFSETS)

    def pack(self):
        out = struct.pack(HEADER_FMT, MAGIC, self.version, *self.bbox_min, *self.bbox_max,
                          self.q_g, self.q_a, self.flags, self.point_count, self.payload_bytes)
        if self.lossy_offsets:
            if self.q_r is None or not self.q_r > 0:
                raise HeaderError("lossy offsets need a positive Q_r")
            out += struct.pack(EXT_FMT, self.q_r)
        return out

    @classmethod
    def unpack(cls, data):
        if len(data) < HEADER_SIZE:
            raise HeaderError(f"stream shorter than header ({len(data)} < {HEADER_SIZE} bytes)")
        vals = struct.unpack_from(HEADER_FMT, data)
        magic, version = vals[0], vals[1]
        if magic != MAGIC:
            raise HeaderError(f"bad magic {magic!r}")
        if version != VERSION:
            raise HeaderError(f"unsupported version {version}")
        q_g, q_a, flags, count, nbytes = vals[8:]
        if not (math.isfinite(q_g) and q_g > 0) or q_a < 1:
            raise HeaderError("invalid quantization parameters")
        if flags & ~KNOWN_FLAGS:
            raise HeaderError(f"unknown flag bits {flags:#x}")
        if count < 1:
            raise HeaderError("point count must be positive")
        bmin, bmax = tuple(vals[2:5]), tuple(vals[5:8])
        if any(lo > hi for lo, hi in zip(bmin, bmax)):
            raise HeaderError("inverted bounding box")
        q_r = None
        if flags & FLAG_LOSSY_OFFSETS:
            if len(data) < HEADER_SIZE + struct.calcsize(EXT_FMT):
                raise HeaderError("stream shorter than header extension")
            (q_r,) = struct.unpack_from(EXT_FMT, data, HEADER_SIZE)
            if not (math.isfinite(q_r) and q_r > 0):
                raise HeaderError("invalid offset step")
        return cls(bmin, bmax, q_g, q_a, flags, count, nbytes, version, q_r)


def f32(x):
    """Round to the precision Q_g has in the header."""
    return float(np.float32(x))


# --- line block --------------------------------------------------------------

@dataclass
class AnglePred:
    theta_idx: int
    phi_idx: int


def _fixed_bits(m):
    return max(0, int(m - 1).bit_length())


def _wrap(delta, m):
    return (delta + m // 2) % m - m // 2


def write_line(enc, q, prev, q_a, offsets=False):
    """Per-line payload.  ``prev`` is the previous line's angles in the same
    node (None for the first line): angles are then delta coded."""
    if q.N < 2:
        raise ValueError("coded lines need N >= 2")
    enc.encode_eg(q.N - 2, EG_N)
    for v in q.a_idx:
        enc.encode_seg(v, EG_A)
    m = theta_alphabet(q.phi_idx, q_a)
    sym = theta_to_symbol(q.theta_idx, q.phi_idx, q_a)
    if prev is None:
        enc.encode_bypass(q.phi_idx, _fixed_bits(q_a + 1))
        enc.encode_bypass(sym, _fixed_bits(m))
    else:
        enc.encode_seg(q.phi_idx - prev.phi_idx, EG_ANGLE_DELTA, CTX_DPHI, 8)
        if m > 1:
            pred = _theta_pred(prev, q.phi_idx, q_a)
            enc.encode_seg(_wrap(sym - pred, m), EG_ANGLE_DELTA, CTX_DTHETA, 8)
    enc.encode_eg(q.d_idx, EG_D)
    if offsets:
        r = np.asarray(q.offset_indices).reshape(-1, 3)
        enc.encode_seg_rows(r, EG_RESID, CTX_RESID, 8, 8)
    return AnglePred(q.theta_idx, q.phi_idx)


def _theta_pred(prev, phi_idx, q_a):
    if phi_idx == 0:
        return prev.theta_idx % (2 * q_a)
    return theta_to_symbol(prev.theta_idx, phi_idx, q_a)


def read_line(dec, prev, q_a, offsets=False, max_points=1 << 31):
    n = dec.decode_eg(EG_N) + 2
    if n > max_points:
        raise GrammarError(f"line with {n} points exceeds stream point budget")
    a_idx = tuple(dec.decode_seg(EG_A) for _ in range(3))
    if prev is None:
        phi_idx = dec.decode_bypass(_fixed_bits(q_a + 1))
        if phi_idx > q_a:
            raise GrammarError(f"phi index {phi_idx} out of range")
        m = theta_alphabet(phi_idx, q_a)
        sym = dec.decode_bypass(_fixed_bits(m))
        if sym >= m:
            raise GrammarError(f"theta symbol {sym} out of range")
    else:
        phi_idx = prev.phi_idx + dec.decode_seg(EG_ANGLE_DELTA, CTX_DPHI, 8)
        if not 0 <= phi_idx <= q_a:
            raise GrammarError(f"phi index {phi_idx} out of range")
        m = theta_alphabet(phi_idx, q_a)
        sym = 0
        if m > 1:
            delta = dec.decode_seg(EG_ANGLE_DELTA, CTX_DTHETA, 8)
            if not -(m // 2) <= delta < m - m // 2:
                raise GrammarError("theta delta out of range")
            sym = (_theta_pred(prev, phi_idx, q_a) + delta) % m
    theta_idx = symbol_to_theta(sym, phi_idx, q_a)
    d_idx = dec.decode_eg(EG_D)
    q = QuantizedLine(a_idx, theta_idx, phi_idx, d_idx, n)
    if offsets:
        q.offset_indices = dec.decode_seg_rows(n, 3, EG_RESID, CTX_RESID, 8, 8)
    return q, AnglePred(theta_idx, phi_idx)


def write_line_count(enc, count):
    if not 1 <= count <= MAX_LINES_CODED:
        raise ValueError("line count out of range")
    for i in range(count - 1):
        enc.encode_bit(CTX_LINE_COUNT + min(i, 7), 1)
    if count < MAX_LINES_CODED:
        enc.encode_bit(CTX_LINE_COUNT + min(count - 1, 7), 0)


def read_line_count(dec):
    count = 1
    while count < MAX_LINES_CODED and dec.decode_bit(CTX_LINE_COUNT + min(count - 1, 7)):
        count += 1
    return count


def write_lines(enc, lines, q_a, offsets=False):
    """Line count then each line; returns the cost in bits of every line."""
    write_line_count(enc, len(lines))
    prev = None
    costs = []
    for q in lines:
        with enc.measure() as cost:
            prev = write_line(enc, q, prev, q_a, offsets)
        costs.append(cost[0])
    return costs


def read_lines(dec, q_a, offsets=False, max_points=1 << 31):
    count = read_line_count(dec)
    prev = None
    lines = []
    for _ in range(count):
        q, prev = read_line(dec, prev, q_a, offsets, max_points)
        max_points -= q.N
        lines.append(q)
    return lines


# --- node payload --------------------------------------------------------------

@dataclass
class NodePayload:
    """Everything coded for one internal node.

    ``subtree_linear`` says whether this node or any descendant carries lines;
    it is only coded when the parent's flag was set.
    """

    occupancy: int = 0
    lines: list = field(default_factory=list)
    subtree_linear: bool = False

    @property
    def mode(self):
        return 1 if self.lines else 0


def write_node_signal(enc, payload, depth, children_may_have_lines, q_a, offsets=False):
    """Linear-model signalling for a node whose parent flag was set."""
    d = min(depth, MAX_DEPTH_CTX - 1)
    enc.encode_bit(CTX_SUBTREE + d, int(payload.subtree_linear))
    if not payload.subtree_linear:
        return []
    if children_may_have_lines:
        enc.encode_bit(CTX_HAS_LINES + d, payload.mode)
    elif not payload.lines:
        raise ValueError("leaf-most linear node must carry lines")
    if not payload.lines:
        return []
    costs = write_lines(enc, payload.lines, q_a, offsets)
    enc.encode_bit(CTX_RESIDUAL, int(payload.occupancy != 0))
    return costs


def read_node_signal(dec, depth, children_may_have_lines, q_a, offsets=False,
                     max_points=1 << 31):
    """Returns (subtree_linear, lines, residual_nonempty)."""
    d = min(depth, MAX_DEPTH_CTX - 1)
    subtree = bool(dec.decode_bit(CTX_SUBTREE + d))
    if not subtree:
        return False, [], True
    has_lines = True
    if children_may_have_lines:
        has_lines = bool(dec.decode_bit(CTX_HAS_LINES + d))
    if not has_lines:
        return True, [], True
    lines = read_lines(dec, q_a, offsets, max_points)
    residual = bool(dec.decode_bit(CTX_RESIDUAL))
    return True, lines, residual


def write_node(enc, payload, depth=0, q_a=40, signalled=True, children_may_have_lines=True,
               offsets=False):
    """Complete payload of a single node in stream order: signalling (when
    the parent flag is set), line block, then the residual occupancy code."""
    from .octree import encode_occupancy

    if signalled:
        write_node_signal(enc, payload, depth, children_may_have_lines, q_a, offsets)
    if payload.occupancy:
        encode_occupancy(payload.occupancy, enc)
    elif not payload.lines:
        raise ValueError("node without lines must have a non-empty occupancy")


def read_node(dec, depth=0, q_a=40, signalled=True, children_may_have_lines=True,
              offsets=False):
    from .octree import decode_occupancy

    subtree, lines, residual = False, [], True
    if signalled:
        subtree, lines, residual = read_node_signal(dec, depth, children_may_have_lines,
                                                    q_a, offsets)
    occ = decode_occupancy(dec) if residual else 0
    return NodePayload(occupancy=occ, lines=lines, subtree_linear=subtree)

"""Octree occupancy coding (the baseline geometry path).

Children are indexed in Morton order with z fastest: ``k = 4*x + 2*y + z``
where x, y, z are the coordinate bits just below the node size.  Nodes are
coded breadth first; within a level, nodes follow their parents' order and
then child index.  Occupancy bits are context coded with the child position
and the number of siblings already found occupied.

The lossy operating point is depth truncation: leaves are ``2**leaf_log2``
voxels wide and decode to their centre.  Lossless leaves carry the low-order
coordinate bits of every point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import bitstream as bs
from .cloud import PointCloud
from .rangecoder import (RangeDecoder, RangeEncoder, dec_bit, dec_bypass, dec_eg,
                         enc_bit, enc_bypass, enc_eg)

CHILD_OFFSETS = np.array([[(k >> 2) & 1, (k >> 1) & 1, k & 1] for k in range(8)], dtype=np.int64)


def leaf_log2_for(q_g):
    """Leaf width is the largest power of two not above max(1, round(Q_g))."""
    s = max(1, int(math.floor(q_g + 0.5)))
    return s.bit_length() - 1


def root_log2_for(extent, leaf_log2):
    return max(leaf_log2, int(max(int(e) for e in extent)).bit_length())


@dataclass
class OctreeNode:
    origin: np.ndarray
    log2_size: int
    point_indices: np.ndarray
    depth: int = 0

    @property
    def size(self):
        return 1 << self.log2_size


class OctreeError(ValueError):
    pass


def child_index(points, log2_size):
    """Child slot of each point in a node of width 2**log2_size."""
    p = np.asarray(points, dtype=np.int64)
    bits = (p >> (log2_size - 1)) & 1
    return bits[:, 0] * 4 + bits[:, 1] * 2 + bits[:, 2]


def partition(node, points):
    """Split ``node`` into its 8 children; absent children are None."""
    if node.log2_size < 1:
        raise OctreeError("cannot partition a unit node")
    idx = np.asarray(node.point_indices, dtype=np.int64)
    p = np.asarray(points, dtype=np.int64)[idx]
    origin = np.asarray(node.origin, dtype=np.int64)
    rel = p - origin
    if len(rel) and (rel.min() < 0 or rel.max() >= node.size):
        raise OctreeError("point outside node bounds")
    k = child_index(rel, node.log2_size)
    half = node.log2_size - 1
    children = []
    for c in range(8):
        sel = idx[k == c]
        if len(sel) == 0:
            children.append(None)
        else:
            children.append(OctreeNode(origin + (CHILD_OFFSETS[c] << half), half, sel,
                                       node.depth + 1))
    return children


def occupancy_of(children):
    code = 0
    for k, child in enumerate(children):
        if child is not None:
            code |= 1 << k
    if code == 0:
        raise OctreeError("all children empty")
    return code


# --- entropy coding kernels ------------------------------------------------------

@njit(cache=True)
def _enc_occupancy(st, buf, emit, probs, cost, codes, ctx_base):
    for j in range(codes.shape[0]):
        code = codes[j]
        count = 0
        for k in range(8):
            bit = (code >> k) & 1
            if k == 7 and count == 0:
                break  # a coded node has at least one child
            enc_bit(st, buf, emit, probs, cost, ctx_base + k * 8 + count, bit)
            count += bit


@njit(cache=True)
def _dec_occupancy(st, data, probs, cost, n, ctx_base):
    codes = np.zeros(n, dtype=np.int64)
    for j in range(n):
        code = 0
        count = 0
        for k in range(8):
            if k == 7 and count == 0:
                bit = 1
            else:
                bit = dec_bit(st, data, probs, cost, ctx_base + k * 8 + count)
            code |= bit << k
            count += bit
        codes[j] = code
        if st[5] != 0:
            break
    return codes


@njit(cache=True)
def _enc_leaves(st, buf, emit, probs, cost, counts, lows, k, multi, ctx_count):
    pos = 0
    for j in range(counts.shape[0]):
        n = counts[j]
        if multi:
            enc_eg(st, buf, emit, probs, cost, n - 1, 0, ctx_count, 8)
        if k > 0:
            for i in range(n):
                for axis in range(3):
                    enc_bypass(st, buf, emit, cost, lows[pos + i, axis], k)
        pos += n


@njit(cache=True)
def _dec_leaves(st, data, probs, cost, n_leaves, k, multi, ctx_count, max_points):
    counts = np.ones(n_leaves, dtype=np.int64)
    lows = np.zeros((max(n_leaves, 1), 3), dtype=np.int64)
    total = 0
    for j in range(n_leaves):
        n = 1
        if multi:
            n = dec_eg(st, data, probs, cost, 0, ctx_count, 8) + 1
            if st[5] != 0:
                break
            if total + n > max_points:
                st[5] = 2
                break
            counts[j] = n
        if total + n > lows.shape[0]:
            grown = np.zeros((max(2 * lows.shape[0], total + n), 3), dtype=np.int64)
            grown[:total] = lows[:total]
            lows = grown
        if k > 0:
            for i in range(n):
                for axis in range(3):
                    lows[total + i, axis] = dec_bypass(st, data, cost, k)
        total += n
        if st[5] != 0:
            break
    return counts, lows[:total]


def encode_occupancy_codes(codes, enc):
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    enc.reserve(len(codes) * 8 + 16)
    _enc_occupancy(enc.st, enc.buf, enc.emit, enc.probs, enc.cost, codes, bs.CTX_OCC)


def decode_occupancy_codes(n, dec):
    codes = _dec_occupancy(dec.st, dec.data, dec.probs, dec.cost, int(n), bs.CTX_OCC)
    dec.check()
    return codes


def encode_occupancy(code, coder):
    if not 0 < code < 256:
        raise OctreeError(f"occupancy code {code} out of range")
    encode_occupancy_codes(np.array([code]), coder)


def decode_occupancy(coder):
    return int(decode_occupancy_codes(1, coder)[0])


def leaf_lows(points, origin, leaf_log2):
    """Low-order bits of points inside a leaf, sorted lexicographically."""
    rel = np.asarray(points, dtype=np.int64) - np.asarray(origin, dtype=np.int64)
    if len(rel) and (rel.min() < 0 or rel.max() >= (1 << leaf_log2)):
        raise OctreeError("point outside leaf")
    return rel[np.lexsort(rel.T[::-1])]


def code_leaf(points, origin, leaf_log2, coder, lossless=True, multi=True):
    """Leaf payload: point count (when ``multi``) and low bits (lossless)."""
    if not lossless:
        return
    lows = leaf_lows(points, origin, leaf_log2)
    counts = np.array([len(lows)], dtype=np.int64)
    coder.reserve(_leaf_reserve(counts, lows, leaf_log2))
    _enc_leaves(coder.st, coder.buf, coder.emit, coder.probs, coder.cost,
                counts, lows, leaf_log2, multi,
                bs.CTX_LEAF_COUNT)


def leaf_center(origin, leaf_log2):
    return np.asarray(origin, dtype=np.int64) + ((1 << leaf_log2) >> 1)


def decode_leaf(origin, leaf_log2, coder, lossless=True, multi=True):
    if not lossless:
        return leaf_center(origin, leaf_log2)[None, :]
    counts, lows = _dec_leaves(coder.st, coder.data, coder.probs, coder.cost, 1, leaf_log2,
                               multi, bs.CTX_LEAF_COUNT, 1 << 31)
    coder.check()
    return np.asarray(origin, dtype=np.int64) + lows


# --- level-wise tree ---------------------------------------------------------------

@dataclass
class Level:
    """All nodes at one depth.  ``perm`` lists point indices grouped by node
    in coding order; node i owns ``perm[starts[i]:starts[i+1]]``."""

    log2_size: int
    depth: int
    perm: np.ndarray
    starts: np.ndarray
    origins: np.ndarray
    parent: np.ndarray | None = None  # index of each node's parent one level up

    @property
    def n_nodes(self):
        return len(self.origins)

    @property
    def counts(self):
        return np.diff(self.starts)

    def node_points(self, i):
        return self.perm[self.starts[i]:self.starts[i + 1]]

    def node_ids(self):
        return np.repeat(np.arange(self.n_nodes), self.counts)

    def keep(self, keep_mask):
        """Drop points (mask over ``perm``); empty nodes disappear.
        Returns the new level and the surviving node ids."""
        kept_counts = np.add.reduceat(keep_mask.astype(np.int64), self.starts[:-1]) \
            if self.n_nodes else np.zeros(0, dtype=np.int64)
        alive = np.flatnonzero(kept_counts > 0)
        starts = np.concatenate([[0], np.cumsum(kept_counts[alive])])
        return Level(self.log2_size, self.depth, self.perm[keep_mask], starts,
                     self.origins[alive]), alive

    def split(self, rel):
        """Occupancy codes of every node and the child level."""
        if self.n_nodes == 0:
            return np.zeros(0, dtype=np.int64), Level(self.log2_size - 1, self.depth + 1,
                                                      self.perm, np.zeros(1, np.int64),
                                                      np.zeros((0, 3), np.int64),
                                                      np.zeros(0, np.int64))
        c = child_index(rel[self.perm], self.log2_size)
        codes = np.bitwise_or.reduceat(np.left_shift(1, c), self.starts[:-1])
        key = self.node_ids() * 8 + c
        order = np.argsort(key, kind="stable")
        key = key[order]
        first = np.concatenate([[True], key[1:] != key[:-1]])
        starts = np.concatenate([np.flatnonzero(first), [len(key)]])
        heads = key[first]
        half = self.log2_size - 1
        origins = self.origins[heads // 8] + (CHILD_OFFSETS[heads % 8] << half)
        child = Level(half, self.depth + 1, self.perm[order], starts, origins, heads // 8)
        return codes, child


def root_level(n_points, root_log2, origin=(0, 0, 0)):
    return Level(root_log2, 0, np.arange(n_points), np.array([0, n_points]),
                 np.asarray(origin, dtype=np.int64).reshape(1, 3))


def child_origins(origins, codes, log2_size, return_parent=False):
    """Origins of the children of ``origins`` given their occupancy codes."""
    if len(codes) == 0:
        out = np.zeros((0, 3), dtype=np.int64)
        return (out, np.zeros(0, dtype=np.int64)) if return_parent else out
    bits = (np.asarray(codes, dtype=np.int64)[:, None] >> np.arange(8)) & 1
    node, k = np.nonzero(bits)
    out = origins[node] + (CHILD_OFFSETS[k] << (log2_size - 1))
    return (out, node) if return_parent else out


def leaf_payload(level, rel):
    """Per-leaf point counts and low bits in coding order."""
    k = level.log2_size
    lows = rel[level.perm] & ((1 << k) - 1)
    ids = level.node_ids()
    order = np.lexsort((lows[:, 2], lows[:, 1], lows[:, 0], ids))
    return level.counts.astype(np.int64), np.ascontiguousarray(lows[order])


def _leaf_reserve(counts, lows, k):
    # context coded decisions cost < 8 bits each
    prefix_bits = int((np.log2(counts.astype(np.float64)) + 2).sum()) * 9 if len(counts) else 0
    return (len(lows) * 3 * k + prefix_bits) // 8 + 64


def encode_leaves(counts, lows, k, multi, enc):
    enc.reserve(_leaf_reserve(counts, lows, k))
    _enc_leaves(enc.st, enc.buf, enc.emit, enc.probs, enc.cost, counts, lows, k, multi,
                bs.CTX_LEAF_COUNT)


def decode_leaves(origins, k, multi, dec, max_points):
    counts, lows = _dec_leaves(dec.st, dec.data, dec.probs, dec.cost, len(origins), k,
                               multi, bs.CTX_LEAF_COUNT, max_points)
    dec.check()
    return np.repeat(origins, counts, axis=0) + lows


# --- whole-cloud baseline codec --------------------------------------------------------

def encode_octree(cloud, q_g, lossless=False, q_a=40):
    """Pure octree stream (no linear-model signalling)."""
    q_g = bs.f32(q_g)
    leaf = leaf_log2_for(q_g)
    pts = np.asarray(cloud.points, dtype=np.int64)
    origin = np.asarray(cloud.bbox_min, dtype=np.int64)
    rel = pts - origin
    root = root_log2_for(cloud.extent, leaf)
    enc = RangeEncoder(bs.NUM_CONTEXTS)
    level = root_level(len(pts), root)
    while level.log2_size > leaf:
        codes, level = level.split(rel)
        encode_occupancy_codes(codes, enc)
    flags = bs.FLAG_LOSSLESS if lossless else 0
    if lossless:
        counts, lows = leaf_payload(level, rel)
        multi = bool((counts > 1).any())
        if multi:
            flags |= bs.FLAG_MULTI_LEAF
        encode_leaves(counts, lows, leaf, multi, enc)
    payload = enc.finish()
    header = bs.StreamHeader(tuple(int(v) for v in cloud.bbox_min),
                             tuple(int(v) for v in cloud.bbox_max),
                             q_g, q_a, flags, len(pts), len(payload))
    return header.pack() + payload


def decode_octree(data):
    header = bs.StreamHeader.unpack(data)
    if header.linear:
        raise OctreeError("stream uses the linear model; use codec.decode")
    payload = data[header.size:]
    if len(payload) != header.payload_bytes:
        raise bs.BitstreamError("payload length does not match header")
    dec = RangeDecoder(payload, bs.NUM_CONTEXTS)
    leaf = leaf_log2_for(header.q_g)
    extent = np.asarray(header.bbox_max, dtype=np.int64) - header.bbox_min
    L = root_log2_for(extent, leaf)
    origins = np.asarray(header.bbox_min, dtype=np.int64).reshape(1, 3)
    while L > leaf:
        codes = decode_occupancy_codes(len(origins), dec)
        origins = child_origins(origins, codes, L)
        if len(origins) > header.point_count:
            raise bs.GrammarError(f"more nodes than points at size 2^{L - 1}")
        L -= 1
    if header.lossless:
        pts = decode_leaves(origins, leaf, header.multi_leaf, dec, header.point_count)
    else:
        pts = leaf_center(origins, leaf)
    dec.finish()
    return PointCloud(pts, keep_duplicates=True)

"""Linear-model geometry codec: octree descent with line signalling.

Stream order, per octree level (breadth first):

1. linear signalling for nodes whose parent carries the subtree flag
   (the root when the linear flag is set): subtree flag, has-lines flag,
   line block, residual-nonempty flag;
2. occupancy codes of every node that still has residual points.

Leaf payloads follow the last level.  The encoder first walks the tree to
make every line decision (the subtree flags need to know about descendants),
then emits.  Line decisions use a shadow copy of the line contexts so the
probed rate of a line equals its emitted cost.
"""

from __future__ import annotations

import math
from dataclasses import asdict, astuple, dataclass, field, replace

import numpy as np

from . import bitstream as bs
from . import octree as ot
from .cloud import PointCloud
from .hough import hough_detect
from .linemodel import DegenerateLine, DetectorConfig
from .quantizer import QuantConfig, fit_quantized_line, quantize_line, reconstruct
from .rangecoder import RangeDecoder, RangeEncoder
from .rdo import (LambdaModel, Mode, RdoConfig, best_window, decide_mode, line_psnr,
                  score_linear)

# lines are only searched in nodes at least 2**LINEAR_MIN_SPAN leaves wide
LINEAR_MIN_SPAN = 2


class CodecError(ValueError):
    pass


@dataclass
class EncoderConfig:
    quant: QuantConfig = field(default_factory=QuantConfig)
    rdo: RdoConfig = field(default_factory=RdoConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    linear_enabled: bool = True
    lossless: bool = False

    @classmethod
    def make(cls, q_g=None, q_a=40, lam=None, T=None, lossless=False, linear=True, q_r=None,
             d_c_bar=None, model=None, detector=None):
        """Convenience constructor.  With ``lam`` given, Q_g and T default to
        the lambda model's values; otherwise T defaults from the model at the
        lambda matching Q_g."""
        model = model or default_lambda_model()
        if q_g is None:
            q_g = model.qg(lam) if lam is not None else 1.0
        if lam is None:
            lam = model.lambda_for_qg(q_g)
        if T is None:
            T = model.T(lam)
        return cls(QuantConfig(q_g, q_a, q_r), RdoConfig(lam, d_c_bar, T),
                   detector or DetectorConfig(), linear, lossless)

    def threshold(self):
        if self.rdo.T is not None:
            return float(self.rdo.T)
        return default_lambda_model().T(self.rdo.lam)


_DEFAULT_MODEL = None


def default_lambda_model():
    """Lambda model fitted on the synthetic training corpus and shipped with
    the package (see scripts/sweep.py)."""
    global _DEFAULT_MODEL
    if _DEFAULT_MODEL is None:
        from importlib import resources

        text = resources.files("linecodec").joinpath("default_lambda_model.json").read_text()
        _DEFAULT_MODEL = LambdaModel.from_json(text)
    return _DEFAULT_MODEL


@dataclass
class EncodeStats:
    nodes_total: int = 0
    nodes_linear: int = 0
    lines_coded: int = 0
    points_by_linear: int = 0
    points_by_octree: int = 0
    bits_by_category: dict = field(default_factory=dict)
    q_g: float = 0.0
    lam: float = 0.0
    T: float = 0.0
    total_bytes: int = 0
    candidate_rds: list = field(default_factory=list)
    line_bits_probed: list = field(default_factory=list)
    line_bits_emitted: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        for k in ("candidate_rds", "line_bits_probed", "line_bits_emitted"):
            d.pop(k)
        return d

    def add_bits(self, category, bits):
        self.bits_by_category[category] = self.bits_by_category.get(category, 0.0) + bits


@dataclass
class AcceptedLine:
    q: object
    members: np.ndarray  # indices into the cloud, in line order
    bits: float


def _prepare(points, m, origin, cfg, peak):
    """Trim a candidate to its fast-RDO window, fit, quantize and measure
    its distortion.  Independent of the coder state, so it is cacheable."""
    qcfg, det = cfg.quant, cfg.detector
    try:
        line, proj = fit_quantized_line(points[m], qcfg, m)
        w = best_window(proj.d, cfg.rdo.tolerance(qcfg.q_g))
        if w.j - w.i + 1 < det.min_points:
            return None
        if w.j - w.i + 1 < line.N:
            sel = line.member_indices[w.i:w.j + 1]
            line, proj = fit_quantized_line(points[sel], qcfg, sel)
    except DegenerateLine:
        return None
    members = line.member_indices
    q = quantize_line(line, proj, qcfg, origin, points=points[members], lossless=cfg.lossless)
    P = line_psnr(points[members], reconstruct(q, qcfg, origin, cfg.lossless), peak)
    return members, q, P


class _NodeCache:
    def __init__(self, cands):
        self.cands = cands
        self.prepared = {}


def _cache_key(cfg, peak):
    q = cfg.quant
    return (q.q_g, q.q_a, q.q_r, cfg.lossless, cfg.rdo.tolerance(q.q_g), peak,
            astuple(cfg.detector))


def _node_cache(points, origin, cfg, peak, cache):
    if cache is None:
        return _NodeCache(hough_detect(points, cfg.detector, cfg.quant.q_g))
    cache, base = cache
    key = (base, tuple(origin), points.tobytes())
    if key not in cache:
        cache[key] = _NodeCache(hough_detect(points, cfg.detector, cfg.quant.q_g))
    return cache[key]


def encode_node_linear(points, ids, origin, cfg, shadow, peak, stats=None, cache=None):
    """Detect, trim, score and accept lines in one node.

    ``points`` are the node's points and ``ids`` their cloud indices;
    ``shadow`` carries the line contexts and is advanced by each accepted
    line.  Candidates are taken by descending inlier count and lose the
    points already claimed by accepted lines.  Returns (accepted lines, mask
    of claimed node points).
    """
    qcfg, det = cfg.quant, cfg.detector
    T = cfg.threshold()
    node = _node_cache(points, origin, cfg, peak, cache)
    claimed = np.zeros(len(points), dtype=bool)
    accepted = []
    prev = None
    for cand in node.cands:
        m = cand.member_indices[~claimed[cand.member_indices]]
        if len(m) < det.min_points:
            continue
        key = m.tobytes()
        if key not in node.prepared:
            node.prepared[key] = _prepare(points, m, origin, cfg, peak)
        prepared = node.prepared[key]
        if prepared is None:
            continue
        members, q, P = prepared
        probe = shadow.probe()
        score = score_linear(points[members], q, qcfg, cfg.rdo, probe, origin, peak, prev,
                             cfg.lossless, P=P)
        if stats is not None:
            stats.candidate_rds.append(score.rds)
        if decide_mode(score, T) is Mode.LINEAR:
            shadow.probs = probe.probs
            prev = bs.AnglePred(q.theta_idx, q.phi_idx)
            accepted.append(AcceptedLine(q, ids[members], score.bits))
            claimed[members] = True
            if len(accepted) == bs.MAX_LINES_CODED:
                break
    return accepted, claimed


def _offsets_coded(cfg):
    return cfg.lossless or cfg.quant.q_r is not None


def _header(cloud, q_g, q_a, flags, payload, q_r=None):
    return bs.StreamHeader(tuple(int(v) for v in cloud.bbox_min),
                           tuple(int(v) for v in cloud.bbox_max),
                           q_g, q_a, flags, len(cloud), len(payload), q_r=q_r).pack()


def encode(cloud, cfg=None, detect_cache=None):
    """Encode ``cloud``; returns (stream bytes, EncodeStats).

    ``detect_cache`` (a dict) memoizes line detection per node point set,
    which speeds up repeated encodes of one cloud in parameter sweeps.
    """
    cfg = cfg or EncoderConfig()
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(np.asarray(cloud))
    q_g = bs.f32(cfg.quant.q_g)
    q_r = None if cfg.quant.q_r is None else bs.f32(cfg.quant.q_r)
    cfg = replace(cfg, quant=replace(cfg.quant, q_g=q_g, q_r=q_r))
    qcfg = cfg.quant
    leaf = ot.leaf_log2_for(q_g)
    pts = np.asarray(cloud.points, dtype=np.int64)
    base = np.asarray(cloud.bbox_min, dtype=np.int64)
    rel = pts - base
    root = ot.root_log2_for(cloud.extent, leaf)
    lin_min = leaf + LINEAR_MIN_SPAN
    linear = cfg.linear_enabled
    offsets = _offsets_coded(cfg)
    peak = max(1.0, float(np.max(cloud.extent)))
    stats = EncodeStats(q_g=q_g, lam=cfg.rdo.lam, T=cfg.threshold())

    # analysis: line decisions, residual tree
    node_cache = None if detect_cache is None else (detect_cache, _cache_key(cfg, peak))
    shadow = RangeEncoder(bs.NUM_CONTEXTS, discard=True)
    levels = []
    level = ot.root_level(len(pts), root)
    while level.log2_size > leaf:
        node_lines = {}
        keep = np.ones(len(level.perm), dtype=bool)
        if linear and level.log2_size >= lin_min:
            counts = level.counts
            det = cfg.detector
            for i in range(level.n_nodes):
                n = counts[i]
                if n < det.min_points or (n > det.max_points and level.depth < det.depth_threshold):
                    continue
                s, e = level.starts[i], level.starts[i + 1]
                ids = level.perm[s:e]
                origin = base + level.origins[i]
                lines, claimed = encode_node_linear(pts[ids], ids, origin, cfg, shadow, peak,
                                                    stats, node_cache)
                if lines:
                    node_lines[i] = lines
                    keep[s:e] = ~claimed
        resid, alive = level.keep(keep)
        codes, child = resid.split(rel)
        levels.append((level, node_lines, alive, codes, child))
        stats.nodes_total += level.n_nodes
        level = child

    # subtree flags, bottom up
    subtree = [None] * len(levels)
    below = None
    for li in range(len(levels) - 1, -1, -1):
        lv, node_lines, alive, _, child = levels[li]
        flag = np.zeros(lv.n_nodes, dtype=bool)
        flag[list(node_lines)] = True
        if below is not None and len(below):
            parents = alive[child.parent]
            np.logical_or.at(flag, parents, below)
        subtree[li] = flag
        below = flag

    # emission
    enc = RangeEncoder(bs.NUM_CONTEXTS)
    signalled = np.array([linear])
    for li, (lv, node_lines, alive, codes, child) in enumerate(levels):
        if linear and lv.log2_size >= lin_min:
            may = lv.log2_size > lin_min
            residual = np.zeros(lv.n_nodes, dtype=bool)
            residual[alive] = True
            lvl_line_bits = 0.0
            with enc.measure() as sig_bits:
                for i in np.flatnonzero(signalled):
                    lines = node_lines.get(i, [])
                    payload = bs.NodePayload(int(residual[i]), [a.q for a in lines],
                                             bool(subtree[li][i]))
                    costs = bs.write_node_signal(enc, payload, lv.depth, may, qcfg.q_a, offsets)
                    for a, c in zip(lines, costs):
                        stats.line_bits_probed.append(a.bits)
                        stats.line_bits_emitted.append(c)
                        stats.lines_coded += 1
                        stats.points_by_linear += len(a.members)
                        stats.add_bits("lines", c)
                        lvl_line_bits += c
                    if lines:
                        stats.nodes_linear += 1
            stats.add_bits("signalling", sig_bits[0] - lvl_line_bits)
        with enc.measure() as occ_bits:
            ot.encode_occupancy_codes(codes, enc)
        stats.add_bits("occupancy", occ_bits[0])
        if linear and child.log2_size >= lin_min:
            signalled = subtree[li][alive][child.parent]
        else:
            signalled = np.zeros(child.n_nodes, dtype=bool)
    flags = (bs.FLAG_LINEAR if linear else 0) | (bs.FLAG_LOSSLESS if cfg.lossless else 0)
    if qcfg.q_r is not None and not cfg.lossless and linear:
        flags |= bs.FLAG_LOSSY_OFFSETS
    leaves = levels[-1][4] if levels else ot.root_level(len(pts), root)
    stats.points_by_octree = len(leaves.perm)
    if cfg.lossless:
        counts, lows = ot.leaf_payload(leaves, rel)
        multi = bool((counts > 1).any())
        if multi:
            flags |= bs.FLAG_MULTI_LEAF
        with enc.measure() as leaf_bits:
            ot.encode_leaves(counts, lows, leaf, multi, enc)
        stats.add_bits("leaves", leaf_bits[0])
    payload = enc.finish()
    q_r = qcfg.q_r if flags & bs.FLAG_LOSSY_OFFSETS else None
    head = _header(cloud, q_g, qcfg.q_a, flags, payload, q_r)
    data = head + payload
    stats.total_bytes = len(data)
    stats.add_bits("header", 8 * len(head))
    return data, stats


def decode(data):
    """Decode a stream produced by :func:`encode` (or the pure octree coder)."""
    header = bs.StreamHeader.unpack(data)
    payload = data[header.size:]
    if len(payload) != header.payload_bytes:
        raise bs.BitstreamError(f"payload is {len(payload)} bytes, header says "
                                f"{header.payload_bytes}")
    if header.lossless and header.lossy_offsets:
        raise bs.HeaderError("lossless and lossy-offset flags are exclusive")
    dec = RangeDecoder(payload, bs.NUM_CONTEXTS)
    q_g = header.q_g
    qcfg = QuantConfig(q_g, header.q_a, header.q_r)
    offsets = header.lossless or header.lossy_offsets
    leaf = ot.leaf_log2_for(q_g)
    base = np.asarray(header.bbox_min, dtype=np.int64)
    extent = np.asarray(header.bbox_max, dtype=np.int64) - base
    L = ot.root_log2_for(extent, leaf)
    lin_min = leaf + LINEAR_MIN_SPAN
    budget = header.point_count
    origins = np.zeros((1, 3), dtype=np.int64)
    signalled = np.array([header.linear])
    parts = []
    depth = 0
    while L > leaf:
        residual = np.ones(len(origins), dtype=bool)
        subtree = np.zeros(len(origins), dtype=bool)
        if header.linear and L >= lin_min:
            for i in np.flatnonzero(signalled):
                try:
                    s, lines, res = bs.read_node_signal(dec, depth, L > lin_min, header.q_a,
                                                        offsets, max_points=budget)
                except bs.BitstreamError as e:
                    raise type(e)(f"node {i} at depth {depth}: {e}") from e
                subtree[i], residual[i] = s, res
                for q in lines:
                    budget -= q.N
                    if budget < 0:
                        raise bs.GrammarError(f"node {i} at depth {depth}: lines exceed "
                                              "the stream point count")
                    parts.append(reconstruct(q, qcfg, base + origins[i], header.lossless))
        occ = origins[residual]
        codes = ot.decode_occupancy_codes(len(occ), dec)
        origins, parent = ot.child_origins(occ, codes, L, return_parent=True)
        if len(origins) > budget:
            raise bs.GrammarError(f"more nodes than points at depth {depth + 1}")
        signalled = subtree[residual][parent]
        L -= 1
        depth += 1
    if header.lossless:
        parts.append(ot.decode_leaves(base + origins, leaf, header.multi_leaf, dec, budget))
    else:
        parts.append(ot.leaf_center(base + origins, leaf))
    dec.finish()
    pts = np.concatenate(parts) if parts else np.zeros((0, 3), dtype=np.int64)
    if len(pts) == 0:
        raise bs.GrammarError("stream decodes to an empty cloud")
    return PointCloud(pts, keep_duplicates=True)

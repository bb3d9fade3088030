"""Seeded synthetic clouds: noisy evenly sampled line segments (Lidar-like)
and uniform noise."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .cloud import PointCloud, voxelize


@dataclass
class SyntheticConfig:
    lines: int = 100
    points_per_line: int = 64
    noise: float = 0.5  # std of the perpendicular Gaussian noise, voxels
    box: int = 1024
    seed: int = 0
    min_length: float | None = None  # None: box / 16
    max_length: float | None = None  # None: box / 4
    clutter: float = 0.0  # extra uniform points, as a fraction of the line points

    def __post_init__(self):
        if self.lines < 1 or self.points_per_line < 1 or self.box < 1:
            raise ValueError("lines, points_per_line and box must be positive")
        if self.noise < 0 or self.clutter < 0:
            raise ValueError("noise and clutter must be non-negative")


@dataclass
class TrueLine:
    a: list
    b: list
    length: float
    n: int


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _perp_basis(b):
    helper = np.eye(3)[int(np.argmin(np.abs(b)))]
    e1 = np.cross(b, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(b, e1)


def line_segments(cfg):
    """Raw (unvoxelized) points and the ground-truth segments."""
    rng = np.random.default_rng(cfg.seed)
    lo = cfg.box / 16 if cfg.min_length is None else cfg.min_length
    hi = cfg.box / 4 if cfg.max_length is None else cfg.max_length
    hi = min(max(hi, lo), cfg.box - 1)
    lo = min(lo, hi)
    chunks, truth = [], []
    m = cfg.points_per_line
    for _ in range(cfg.lines):
        b = _unit(rng)
        length = rng.uniform(lo, hi) if m > 1 else 0.0
        span = np.abs(b) * length
        a = rng.uniform(0, np.maximum(cfg.box - 1 - span, 0)) + np.where(b < 0, span, 0)
        t = np.linspace(0.0, length, m)
        x = a[None, :] + t[:, None] * b[None, :]
        if cfg.noise > 0:
            e1, e2 = _perp_basis(b)
            n = rng.normal(scale=cfg.noise, size=(m, 2))
            x += n[:, :1] * e1[None, :] + n[:, 1:] * e2[None, :]
        chunks.append(x)
        truth.append(TrueLine(a.tolist(), b.tolist(), float(length), m))
    n_clutter = int(round(cfg.clutter * cfg.lines * m))
    if n_clutter:
        chunks.append(rng.uniform(0, cfg.box - 1, size=(n_clutter, 3)))
    raw = np.clip(np.concatenate(chunks), 0, cfg.box - 1)
    return raw, truth


def gen_synthetic(cfg):
    """Voxelized cloud (duplicates kept, so every line keeps its M points)
    and the ground truth."""
    raw, truth = line_segments(cfg)
    return voxelize(raw, 1.0, keep_duplicates=True), truth


def uniform_cloud(n, box, seed):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.integers(0, box, size=(n, 3)))


def write_truth(truth, path):
    with open(path, "w") as f:
        json.dump([asdict(t) for t in truth], f, indent=1)
        f.write("\n")


def lidar_corpus(count, seed=0, lines=(50, 200), noise=1.0, box=1024, ppl=(32, 96), clutter=0.0):
    """The seeded corpus used for the linear-vs-octree comparison."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        cfg = SyntheticConfig(lines=int(rng.integers(lines[0], lines[1] + 1)),
                              points_per_line=int(rng.integers(ppl[0], ppl[1] + 1)),
                              noise=float(rng.uniform(0.0, noise)), box=box,
                              seed=int(rng.integers(2**31)), clutter=clutter)
        cloud, _ = gen_synthetic(cfg)
        out.append(PointCloud(cloud.points))
    return out

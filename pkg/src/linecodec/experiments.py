"""RD points of the linear codec against the octree-only anchor, shared by
scripts/rd_curve.py and the acceptance run."""

from __future__ import annotations

import numpy as np

from .codec import EncoderConfig, decode, encode
from .metrics import RdCurve, bd_rate, evaluate
from .rdo import DEFAULT_QG_GRID

RD_FIELDS = ["cloud", "mode", "qg", "bpp", "d1_psnr", "d2_psnr"]


def rd_points(cloud, name, qgs=DEFAULT_QG_GRID, q_a=40):
    rows = []
    for mode, linear in (("octree", False), ("linear", True)):
        for q_g in qgs:
            data, _ = encode(cloud, EncoderConfig.make(q_g=q_g, q_a=q_a, linear=linear))
            r = evaluate(cloud, decode(data))
            rows.append(dict(cloud=name, mode=mode, qg=q_g, bpp=8.0 * len(data) / len(cloud),
                             d1_psnr=r.d1_psnr, d2_psnr=r.d2_psnr))
    return rows


def bd_for(rows, metric):
    """BD-rate of the linear rows against the octree rows (percent)."""
    curves = {}
    for mode in ("octree", "linear"):
        pts = [(r["bpp"], r[f"{metric}_psnr"]) for r in rows if r["mode"] == mode]
        curves[mode] = RdCurve.from_points(pts)
    return bd_rate(curves["octree"], curves["linear"])


def corpus_bd(clouds, qgs=DEFAULT_QG_GRID):
    """(rows, per-cloud D1 BD-rates, per-cloud D2 BD-rates)."""
    rows, bd1, bd2 = [], [], []
    for k, cloud in enumerate(clouds):
        rs = rd_points(cloud, f"c{k:02d}", qgs)
        rows += rs
        bd1.append(bd_for(rs, "d1"))
        bd2.append(bd_for(rs, "d2"))
    return rows, np.array(bd1), np.array(bd2)


# seeded corpora: the lambda model is trained on one, the RD comparison runs
# on another
TRAINING_CORPUS = dict(count=3, seed=7, lines=(50, 60), ppl=(32, 96), clutter=0.1)
EVAL_CORPUS = dict(count=20, seed=2024, lines=(50, 200), noise=1.0)


def training_corpus(**over):
    from .synthetic import lidar_corpus

    kw = dict(TRAINING_CORPUS, **over)
    return lidar_corpus(kw.pop("count"), **kw)


def eval_corpus(**over):
    from .synthetic import lidar_corpus

    kw = dict(EVAL_CORPUS, **over)
    return lidar_corpus(kw.pop("count"), **kw)

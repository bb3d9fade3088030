"""Geometry distortion (D1 point-to-point, D2 point-to-plane) and BD-rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

NORMALS_K = 12
DEGENERATE_TOL = 1e-9  # relative size of the 2nd eigenvalue below which a neighbourhood is a line


class MetricError(ValueError):
    pass


def _as_points(x):
    pts = getattr(x, "points", x)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise MetricError("metrics need a non-empty (n, 3) point set")
    return pts


def peak_of(cloud):
    """Longest bounding box edge (at least 1 voxel)."""
    pts = _as_points(cloud)
    return max(1.0, float((pts.max(axis=0) - pts.min(axis=0)).max()))


def psnr(mse, peak):
    if mse <= 0:
        return math.inf
    return 10.0 * math.log10(3.0 * peak * peak / mse)


def nearest(reference, test):
    """Index into ``reference`` of the nearest neighbour of every test point,
    and the error vectors test - reference[idx]."""
    ref = _as_points(reference)
    tst = _as_points(test)
    _, idx = cKDTree(ref).query(tst, k=1)
    return idx, tst - ref[idx]


def d1(reference, test):
    """Mean squared distance from each test point to its nearest reference point."""
    _, err = nearest(reference, test)
    return float((err * err).sum(axis=1).mean())


def estimate_normals(points, k=NORMALS_K):
    """Unit normals from the smallest eigenvector of the k-NN covariance.

    Returns (normals, degenerate) where ``degenerate`` marks neighbourhoods
    whose points are collinear (no plane is defined there).
    """
    pts = _as_points(points)
    if len(pts) < k:
        raise MetricError(f"normal estimation needs at least {k} points, got {len(pts)}")
    _, nn = cKDTree(pts).query(pts, k=k)
    nb = pts[nn]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]
    scale = np.maximum(w[:, 2], 1e-300)
    degenerate = w[:, 1] <= DEGENERATE_TOL * scale
    return normals, degenerate


def d2(reference, test, normals_k=NORMALS_K, normals=None, return_fallbacks=False):
    """Point-to-plane MSE: the nearest-neighbour error projected on the
    reference normal.  Collinear neighbourhoods fall back to the full error."""
    ref = _as_points(reference)
    if normals is None:
        normals, degenerate = estimate_normals(ref, normals_k)
    else:
        normals, degenerate = normals
    idx, err = nearest(ref, test)
    proj = np.einsum("ij,ij->i", err, normals[idx])
    sq = proj * proj
    fb = degenerate[idx]
    sq[fb] = (err[fb] ** 2).sum(axis=1)
    mse = float(sq.mean())
    if return_fallbacks:
        return mse, int(fb.sum())
    return mse


@dataclass
class DistortionReport:
    d1_ab: float
    d1_ba: float
    d2_ab: float
    d2_ba: float
    peak: float
    d2_fallbacks: int = 0

    @property
    def d1_mse(self):
        return max(self.d1_ab, self.d1_ba)

    @property
    def d2_mse(self):
        return max(self.d2_ab, self.d2_ba)

    @property
    def d1_psnr(self):
        return psnr(self.d1_mse, self.peak)

    @property
    def d2_psnr(self):
        return psnr(self.d2_mse, self.peak)


def evaluate(reference, test, normals_k=NORMALS_K, peak=None):
    """Symmetric D1/D2 between a reference cloud and its reconstruction.

    a->b measures test points against the reference and b->a the reverse;
    each direction uses the normals of the cloud it is measured against.
    """
    ref = _as_points(reference)
    tst = _as_points(test)
    peak = peak_of(ref) if peak is None else float(peak)
    d2_ab, fb_ab = d2(ref, tst, normals_k, return_fallbacks=True)
    if len(tst) >= normals_k:
        d2_ba, fb_ba = d2(tst, ref, normals_k, return_fallbacks=True)
    else:
        d2_ba, fb_ba = d1(tst, ref), len(ref)
    return DistortionReport(d1(ref, tst), d1(tst, ref), d2_ab, d2_ba, peak, fb_ab + fb_ba)


# --- BD-rate -------------------------------------------------------------------

@dataclass
class RdCurve:
    """Rate-distortion points (bits per point, PSNR dB) sorted by rate."""

    rate: np.ndarray
    psnr: np.ndarray

    def __post_init__(self):
        rate = np.asarray(self.rate, dtype=np.float64)
        q = np.asarray(self.psnr, dtype=np.float64)
        if rate.shape != q.shape or rate.ndim != 1:
            raise MetricError("rate and psnr must be 1-d and the same length")
        order = np.argsort(rate, kind="stable")
        self.rate, self.psnr = rate[order], q[order]
        if len(self.rate) < 4:
            raise MetricError("an RD curve needs at least 4 points")
        if np.any(self.rate <= 0) or np.any(np.diff(self.rate) <= 0):
            raise MetricError("rates must be positive and strictly increasing")
        if not np.all(np.isfinite(self.psnr)):
            raise MetricError("PSNR values must be finite")

    @classmethod
    def from_points(cls, points):
        """Build from (rate, psnr) pairs, dropping points with infinite PSNR."""
        pts = [(r, p) for r, p in points if math.isfinite(p)]
        return cls([r for r, _ in pts], [p for _, p in pts])


def bd_rate(anchor, test):
    """Average bitrate difference of ``test`` against ``anchor`` in percent
    at equal PSNR (negative means savings).  Cubic fit of log-rate on PSNR,
    integrated over the shared PSNR interval."""
    lo = max(anchor.psnr.min(), test.psnr.min())
    hi = min(anchor.psnr.max(), test.psnr.max())
    if not hi > lo:
        raise MetricError("RD curves do not overlap in PSNR")
    pa = np.polyint(np.polyfit(anchor.psnr, np.log(anchor.rate), 3))
    pt = np.polyint(np.polyfit(test.psnr, np.log(test.rate), 3))
    avg = ((np.polyval(pt, hi) - np.polyval(pt, lo)) -
           (np.polyval(pa, hi) - np.polyval(pa, lo))) / (hi - lo)
    return float((math.exp(avg) - 1.0) * 100.0)

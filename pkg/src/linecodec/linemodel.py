"""Line representation of near-collinear points.

A line is an anchor ``a`` and a unit direction ``b``.  Member points are
ordered by their projection position ``p_i = b.(x_i - a)`` with the anchor
moved onto the first projected point, so ``p_1 = 0`` and the spacings
``d_i = p_{i+1} - p_i`` are non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EIG_TIE_TOL = 1e-9


class DegenerateLine(ValueError):
    pass


@dataclass
class DetectorConfig:
    min_points: int = 8
    max_points: int = 4096
    depth_threshold: int = 4
    inlier_distance: float | None = None  # None: 2 * max(1, Q_g)
    hough_direction_bins: int = 3  # max icosahedron subdivision order
    hough_shift_bins: int = 512  # cap on accumulator cells per plane axis
    max_lines_per_node: int = 8
    max_iterations: int = 10

    def __post_init__(self):
        for name in ("min_points", "max_points", "depth_threshold",
                     "hough_shift_bins", "max_lines_per_node", "max_iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hough_direction_bins < 0:
            raise ValueError("hough_direction_bins must be >= 0")
        if self.min_points < 2:
            raise ValueError("min_points must be at least 2")
        if self.max_lines_per_node > 255:
            raise ValueError("max_lines_per_node must be <= 255")
        if self.inlier_distance is not None and self.inlier_distance < 1:
            raise ValueError("inlier_distance must be at least 1 voxel")

    def inlier_dist(self, q_g):
        if self.inlier_distance is not None:
            return float(self.inlier_distance)
        return 2.0 * max(1.0, float(q_g))


@dataclass
class Line:
    a: np.ndarray
    b: np.ndarray
    member_indices: np.ndarray
    N: int = field(init=False)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.member_indices = np.asarray(self.member_indices, dtype=np.int64)
        self.N = len(self.member_indices)


@dataclass
class ProjectionParams:
    p: np.ndarray
    mode: str = "even"
    segments: list = field(default_factory=list)

    @property
    def d(self):
        return np.diff(self.p)

    @property
    def d_bar(self):
        # mean of the N-1 spacings
        n = len(self.p)
        return float(self.p[-1] - self.p[0]) / (n - 1) if n >= 2 else 0.0


@dataclass
class OffsetParams:
    r: np.ndarray


def eligible(node, cfg):
    """Density gate for line detection in an octree node."""
    n = len(node.point_indices)
    if n < cfg.min_points:
        return False
    return n <= cfg.max_points or node.depth >= cfg.depth_threshold


# --- 3x3 symmetric eigen-decomposition --------------------------------------

def sym3_eigenvalues(A):
    """Eigenvalues of a symmetric 3x3 matrix, descending, from the
    characteristic polynomial (trigonometric form)."""
    a11, a22, a33 = A[0, 0], A[1, 1], A[2, 2]
    a12, a13, a23 = A[0, 1], A[0, 2], A[1, 2]
    p1 = a12 * a12 + a13 * a13 + a23 * a23
    q = (a11 + a22 + a33) / 3.0
    if p1 <= 1e-30 * max(1.0, q * q):
        return np.sort(np.array([a11, a22, a33]))[::-1]
    p2 = (a11 - q) ** 2 + (a22 - q) ** 2 + (a33 - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    B = (A - q * np.eye(3)) / p
    r = np.linalg.det(B) / 2.0
    r = min(1.0, max(-1.0, r))
    phi = math.acos(r) / 3.0
    e1 = q + 2.0 * p * math.cos(phi)
    e3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.array([e1, e2, e3])


def _cross(u, v):
    return np.array([u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                     u[0] * v[1] - u[1] * v[0]])


def _null_vector(M):
    """Unit vector spanning the null space of a rank-2 symmetric 3x3 matrix."""
    cands = [_cross(M[0], M[1]), _cross(M[0], M[2]), _cross(M[1], M[2])]
    norms = [float(c @ c) for c in cands]
    k = int(np.argmax(norms))
    if norms[k] <= 0:
        return None
    return cands[k] / math.sqrt(norms[k])


def dominant_eigenvector(A):
    """Eigenvector of the largest eigenvalue of a symmetric 3x3 matrix.

    When the top eigenvalue is repeated (within EIG_TIE_TOL relative) the
    result is the coordinate axis with the largest component inside the
    dominant eigenspace, projected onto it.
    """
    A = np.asarray(A, dtype=np.float64)
    lam = sym3_eigenvalues(A)
    scale = max(1.0, abs(lam[0]))
    axes = np.eye(3)
    if lam[0] - lam[2] <= EIG_TIE_TOL * scale:
        return axes[0].copy()
    if lam[0] - lam[1] <= EIG_TIE_TOL * scale:
        # dominant eigenspace is the plane orthogonal to the smallest eigenvector
        v3 = _null_vector(A - lam[2] * np.eye(3))
        k = int(np.argmin(np.abs(v3)))
        v = axes[k] - np.dot(axes[k], v3) * v3
        return v / np.linalg.norm(v)
    v = _null_vector(A - lam[0] * np.eye(3))
    if v is None:
        return axes[0].copy()
    # polish against round-off in the closed-form eigenvalue
    v = A @ v
    return v / np.linalg.norm(v)


def canonical_direction(b):
    """Flip b so that b_z > 0, or b_z == 0 and theta lies in [0, pi)."""
    b = np.asarray(b, dtype=np.float64)
    if b[2] < 0 or (b[2] == 0 and (b[1] < 0 or (b[1] == 0 and b[0] < 0))):
        return -b
    return b.copy()


def fit_line_pca(points):
    """Centroid and dominant principal direction of ``points``."""
    x = np.asarray(points, dtype=np.float64)
    if len(x) < 2 or np.all(x == x[0]):
        raise DegenerateLine("need at least two distinct points to fit a line")
    a = x.mean(axis=0)
    Q = x - a
    b = dominant_eigenvector(Q.T @ Q)
    return a, canonical_direction(b)


def project_and_order(points, a, b, indices=None):
    """Orthogonal projection onto the line (a, b) with members reordered by
    projection position and the anchor moved to the first projection."""
    x = np.asarray(points, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if indices is None:
        indices = np.arange(len(x))
    p = (x - a) @ b
    order = np.argsort(p, kind="stable")
    p = p[order]
    a_new = a + p[0] * b
    p = p - p[0]
    line = Line(a_new, b, np.asarray(indices)[order])
    return line, ProjectionParams(p=p, mode="even", segments=[(0, _mean_or_zero(np.diff(p)))])


def _mean_or_zero(d):
    return float(np.mean(d)) if len(d) else 0.0


def projected_points(line, proj):
    return line.a[None, :] + proj.p[:, None] * line.b[None, :]


def make_offsets(points, line, proj):
    """Residuals r_i = x_i - x'_i for members in line order."""
    x = np.asarray(points, dtype=np.float64)
    return OffsetParams(r=x - projected_points(line, proj))


def mean_cumulative_deviation(d):
    """L1 norm of the running sums of (d_t - mean(d)) divided by len(d).

    Zero for perfectly even spacing; this is the along-line distortion
    estimate used by the fast subset search.
    """
    d = np.asarray(d, dtype=np.float64)
    if len(d) == 0:
        return 0.0
    e = d - d.mean()
    return float(np.abs(np.cumsum(e)).sum() / len(d))


def segment_piecewise(d, tolerance):
    """Greedy left-to-right split of spacings into near-even runs.

    Returns (start_index, mean) pairs covering all of d.
    """
    d = np.asarray(d, dtype=np.float64)
    if len(d) == 0:
        raise ValueError("need at least one spacing")
    segments = []
    start = 0
    for end in range(2, len(d) + 1):
        if not mean_cumulative_deviation(d[start:end]) < tolerance:
            segments.append((start, float(d[start:end - 1].mean())))
            start = end - 1
    segments.append((start, float(d[start:].mean())))
    return segments

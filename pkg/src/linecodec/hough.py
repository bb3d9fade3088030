"""Iterative 3D Hough transform line detector.

Directions are the vertices of a subdivided icosahedron restricted to a half
sphere.  For each direction, every point votes for the cell of its projection
onto the plane orthogonal to that direction.  The best (direction, cell) pair
seeds a line which is refined by PCA on its inliers; the inliers are removed
and the search repeats.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numba import njit

from .linemodel import DegenerateLine, Line, canonical_direction, fit_line_pca


@lru_cache(maxsize=None)
def hemisphere_directions(order):
    """Unit vectors of an icosahedron subdivided ``order`` times, one per
    antipodal pair (canonical half: z > 0, or z == 0 with theta in [0, pi))."""
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(order):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for i, j, k in faces:
            a, b, c = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = new_faces

    V = np.array(verts)
    V[np.abs(V) < 1e-12] = 0.0
    keep = (V[:, 2] > 0) | ((V[:, 2] == 0) & ((V[:, 1] > 0) | ((V[:, 1] == 0) & (V[:, 0] > 0))))
    return np.ascontiguousarray(V[keep])


@njit(cache=True)
def _best_cell(pts, dirs, dx, radius, grid, acc):
    """Best (direction, cell) over all directions; ``pts`` are the active
    points centred on the node."""
    best_votes = 0
    best_dir = -1
    best_iu = 0
    best_iv = 0
    n = pts.shape[0]
    inv = 1.0 / dx
    off = radius * inv + 0.5  # |u|, |v| <= radius so cells are non-negative
    cells = np.empty(n, dtype=np.int64)
    for k in range(dirs.shape[0]):
        bx, by, bz = dirs[k, 0], dirs[k, 1], dirs[k, 2]
        beta = 1.0 / (1.0 + bz)
        u0, u1, u2 = (1.0 - bx * bx * beta) * inv, -bx * by * beta * inv, -bx * inv
        v0, v1, v2 = -bx * by * beta * inv, (1.0 - by * by * beta) * inv, -by * inv
        for i in range(n):
            x, y, z = pts[i, 0], pts[i, 1], pts[i, 2]
            iu = int(u0 * x + u1 * y + u2 * z + off)
            iv = int(v0 * x + v1 * y + v2 * z + off)
            c = iu * grid + iv
            cells[i] = c
            acc[c] += 1
            if acc[c] > best_votes:
                best_votes = acc[c]
                best_dir = k
                best_iu = iu
                best_iv = iv
        for i in range(n):
            acc[cells[i]] = 0
    return best_votes, best_dir, best_iu * dx - radius, best_iv * dx - radius


ICO_EDGE = 1.1071487177940904  # angle between adjacent icosahedron vertices, rad


def direction_order(radius, tol, max_order):
    """Coarsest subdivision whose covering angle (about 0.6 of the vertex
    spacing), swept over ``radius``, stays within the inlier tolerance."""
    need = 0.6 * ICO_EDGE * radius / tol
    order = 0 if need <= 1 else int(np.ceil(np.log2(need)))
    return min(order, max_order)


def _plane_basis(b):
    beta = 1.0 / (1.0 + b[2])
    e1 = np.array([1.0 - b[0] * b[0] * beta, -b[0] * b[1] * beta, -b[0]])
    e2 = np.array([-b[0] * b[1] * beta, 1.0 - b[1] * b[1] * beta, -b[1]])
    return e1, e2


def line_distances(points, a, b):
    d = points - a
    t = d @ b
    return np.linalg.norm(d - t[:, None] * b, axis=1)


def hough_detect(points, cfg, q_g=1.0):
    """Detect up to ``cfg.max_lines_per_node`` lines among ``points``.

    Returns Line candidates (``member_indices`` index into ``points``) sorted by
    descending inlier count.  Members are unordered; anchors are centroids.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < cfg.min_points:
        return []
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    local = np.ascontiguousarray(pts - center)
    radius = float(np.sqrt((local ** 2).sum(axis=1).max())) + 1e-9
    tol = cfg.inlier_dist(q_g)
    dx = max(tol, 2.0 * radius / max(1, cfg.hough_shift_bins - 1))
    grid = int(np.floor(2.0 * radius / dx + 0.5)) + 2
    acc = np.zeros(grid * grid, dtype=np.int32)
    dirs = hemisphere_directions(direction_order(radius, tol, cfg.hough_direction_bins))
    active = np.ones(len(pts), dtype=np.bool_)

    lines = []
    while len(lines) < cfg.max_lines_per_node and active.sum() >= cfg.min_points:
        votes, k, u, v = _best_cell(np.ascontiguousarray(local[active]), dirs, dx, radius,
                                     grid, acc)
        if votes < cfg.min_points:
            break
        b = dirs[k]
        e1, e2 = _plane_basis(b)
        a = u * e1 + v * e2
        idx = np.flatnonzero(active)
        members = idx[line_distances(local[idx], a, b) <= dx]
        for _ in range(cfg.max_iterations):
            if len(members) < 2:
                break
            try:
                a_new, b_new = fit_line_pca(local[members])
            except DegenerateLine:
                break
            new_members = idx[line_distances(local[idx], a_new, b_new) <= tol]
            a, b = a_new, b_new
            if np.array_equal(new_members, members):
                break
            members = new_members
        if len(members) < cfg.min_points:
            break
        lines.append(Line(a + center, canonical_direction(b), members))
        active[members] = False

    lines.sort(key=lambda ln: -ln.N)
    return lines

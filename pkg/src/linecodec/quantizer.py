"""Quantization and reconstruction of line parameters.

Direction is coded on a (theta, phi) grid with equal angular step pi/(2*Q_a)
on both axes; the anchor uses step Q_s = Q_g and the mean spacing uses
Q_d = Q_g/(N-1) so that the drift accumulated over N-1 spacings stays within
Q_g/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import round_half_away
from .linemodel import canonical_direction, fit_line_pca, project_and_order


@dataclass
class QuantConfig:
    q_g: float = 1.0
    q_a: int = 40
    q_r: float | None = None  # None: 0 (exact) when lossless, else Q_g

    def __post_init__(self):
        if not self.q_g > 0:
            raise ValueError("Q_g must be positive")
        if int(self.q_a) != self.q_a or self.q_a < 1:
            raise ValueError("Q_a must be a positive integer")
        self.q_a = int(self.q_a)

    @property
    def q_s(self):
        return float(self.q_g)

    def q_d(self, n):
        if n < 2:
            raise ValueError("spacing step needs N >= 2")
        return float(self.q_g) / (n - 1)

    def offset_step(self, lossless):
        if lossless:
            return 0.0
        return float(self.q_g if self.q_r is None else self.q_r)


def angle_steps(q_a):
    """(theta step, phi step): 2*pi over 4*Q_a and (pi/2) over Q_a."""
    return 2.0 * math.pi / (4 * q_a), (math.pi / 2.0) / q_a


@dataclass
class QuantizedLine:
    a_idx: tuple
    theta_idx: int
    phi_idx: int
    d_idx: int
    N: int
    offset_indices: np.ndarray | None = None

    def __post_init__(self):
        self.a_idx = tuple(int(v) for v in self.a_idx)


def to_spherical(b):
    """Direction -> (theta, phi) after canonicalizing the sign of b."""
    b = canonical_direction(b)
    if b[0] == 0 and b[1] == 0:
        return 0.0, math.pi / 2.0
    theta = math.atan2(b[1], b[0])
    phi = math.atan2(b[2], math.hypot(b[0], b[1]))
    return theta, phi


def from_spherical(theta, phi):
    return np.array([math.cos(phi) * math.cos(theta),
                     math.cos(phi) * math.sin(theta),
                     math.sin(phi)])


def _round(x):
    return int(round_half_away(x))


def canonical_angle_indices(theta_idx, phi_idx, q_a):
    """Fold indices into the canonical set: phi in [0, Q_a]; theta in
    (-2Q_a, 2Q_a]; theta in [0, 2Q_a) on the equator; theta 0 at the pole."""
    phi_idx = min(max(int(phi_idx), 0), q_a)
    theta_idx = int(theta_idx)
    if phi_idx == q_a:
        return 0, phi_idx
    if phi_idx == 0:
        return theta_idx % (2 * q_a), 0
    theta_idx = (theta_idx + 2 * q_a - 1) % (4 * q_a) - 2 * q_a + 1
    return theta_idx, phi_idx


def quantize_angles(theta, phi, q_a):
    t_step, p_step = angle_steps(q_a)
    return canonical_angle_indices(_round(theta / t_step), _round(phi / p_step), q_a)


def dequantize_angles(theta_idx, phi_idx, q_a):
    t_step, p_step = angle_steps(q_a)
    return theta_idx * t_step, phi_idx * p_step


def quantize_direction(b, q_a):
    return quantize_angles(*to_spherical(b), q_a)


def dequantize_direction(theta_idx, phi_idx, q_a):
    return from_spherical(*dequantize_angles(theta_idx, phi_idx, q_a))


def theta_alphabet(phi_idx, q_a):
    """Number of admissible theta indices for a given phi index."""
    if phi_idx == q_a:
        return 1
    if phi_idx == 0:
        return 2 * q_a
    return 4 * q_a


def theta_to_symbol(theta_idx, phi_idx, q_a):
    if phi_idx == 0 or phi_idx == q_a:
        return theta_idx
    return theta_idx + 2 * q_a - 1


def symbol_to_theta(sym, phi_idx, q_a):
    if phi_idx == 0 or phi_idx == q_a:
        return sym
    return sym - 2 * q_a + 1


def quantize_line(line, proj, cfg, origin=(0, 0, 0), points=None, lossless=False):
    """Quantize a line in even mode.

    ``points`` (members in line order) are required to code offsets, which
    happens when ``lossless`` is set or ``cfg.q_r`` is given.
    """
    n = line.N
    if n < 1:
        raise ValueError("line has no members")
    origin = np.asarray(origin, dtype=np.float64)
    theta_idx, phi_idx = quantize_direction(line.b, cfg.q_a)
    a_idx = tuple(_round(v) for v in (line.a - origin) / cfg.q_s)
    d_idx = 0
    if n >= 2:
        d_bar = proj.d_bar
        if d_bar < 0:
            raise ValueError("mean spacing must be non-negative")
        d_idx = _round(d_bar / cfg.q_d(n))
    q = QuantizedLine(a_idx, theta_idx, phi_idx, d_idx, n)
    want_offsets = lossless or cfg.q_r is not None
    if want_offsets:
        if points is None:
            raise ValueError("offset coding needs the member points")
        x = np.asarray(points, dtype=np.float64)
        base = reconstruct_base(q, cfg, origin)
        step = cfg.offset_step(lossless)
        if step == 0:
            r = np.asarray(x, dtype=np.int64) - round_half_away(base).astype(np.int64)
        else:
            r = round_half_away((x - base) / step).astype(np.int64)
        q.offset_indices = r
    return q


def dequantize_line(q, cfg, origin=(0, 0, 0)):
    """(a_hat, b_hat, d_hat) in absolute voxel coordinates."""
    a_hat = np.asarray(origin, dtype=np.float64) + np.asarray(q.a_idx, dtype=np.float64) * cfg.q_s
    b_hat = dequantize_direction(q.theta_idx, q.phi_idx, cfg.q_a)
    d_hat = (q.d_idx * cfg.q_g) / (q.N - 1) if q.N >= 2 else 0.0
    return a_hat, b_hat, d_hat


def reconstruct_base(q, cfg, origin=(0, 0, 0)):
    """Unrounded points a_hat + (i-1) * d_hat * b_hat."""
    a_hat, b_hat, d_hat = dequantize_line(q, cfg, origin)
    p_hat = np.arange(q.N, dtype=np.float64) * d_hat
    return a_hat[None, :] + p_hat[:, None] * b_hat[None, :]


def reconstruct(q, cfg, origin=(0, 0, 0), lossless=False, round_output=True):
    base = reconstruct_base(q, cfg, origin)
    if q.offset_indices is not None:
        step = cfg.offset_step(lossless)
        if step == 0:
            return round_half_away(base).astype(np.int64) + q.offset_indices
        base = base + q.offset_indices * step
    if round_output:
        return round_half_away(base).astype(np.int64)
    return base


def fit_quantized_line(points, cfg, indices=None):
    """Fit a line to ``points`` with its direction snapped to the angular grid.

    The anchor and spacings are derived by projecting onto the quantized
    direction through the centroid, so direction quantization error rotates
    the line about its centre rather than about its first point.
    """
    centroid, b = fit_line_pca(points)
    b_hat = dequantize_direction(*quantize_direction(b, cfg.q_a), cfg.q_a)
    return project_and_order(points, centroid, b_hat, indices)


def accumulation_bound(cfg, n, p_max):
    """Worst-case position error for evenly spaced on-line points."""
    t_step, _ = angle_steps(cfg.q_a)
    d_term = (n - 1) * cfg.q_d(n) / 2.0 if n >= 2 else 0.0
    return math.sqrt(3.0) / 2.0 * cfg.q_s + d_term + p_max * t_step / 2.0
